pub mod numcore;
pub mod dataset;
pub mod kge;
pub mod fusion;
pub mod hide;
pub mod objectives;
pub mod fedproto;
