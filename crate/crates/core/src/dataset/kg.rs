use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::DataError;

/// A directed labeled edge `(head, relation, tail)` by index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Visual,
    Textual,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Visual, Modality::Textual];

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Visual => "v",
            Modality::Textual => "d",
        }
    }
}

/// Per-entity lists of raw feature vectors for one modality, all of width
/// `dim`. An entity with no variants is missing that modality everywhere.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureVariants {
    pub dim: usize,
    pub per_entity: Vec<Vec<Vec<f64>>>,
}

impl FeatureVariants {
    pub fn empty(entities: usize, dim: usize) -> Self {
        Self {
            dim,
            per_entity: vec![Vec::new(); entities],
        }
    }
}

/// Entities, relations, triples, and per-entity multimodal feature variants.
#[derive(Clone, Debug, Default)]
pub struct MultimodalKG {
    pub entity_names: Vec<String>,
    pub relation_names: Vec<String>,
    /// A multiset: duplicates are kept as given.
    pub triples: Vec<Triple>,
    pub visual: FeatureVariants,
    pub textual: FeatureVariants,
    /// Latent phases per entity, set by the synthetic generator.
    pub latent: Option<Vec<Vec<f64>>>,
}

impl MultimodalKG {
    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn features(&self, m: Modality) -> &FeatureVariants {
        match m {
            Modality::Visual => &self.visual,
            Modality::Textual => &self.textual,
        }
    }

    pub fn features_mut(&mut self, m: Modality) -> &mut FeatureVariants {
        match m {
            Modality::Visual => &mut self.visual,
            Modality::Textual => &mut self.textual,
        }
    }

    /// Parses `head\trelation\ttail` lines, interning names in order of first
    /// appearance.
    pub fn parse_triples(text: &str) -> Result<Self, DataError> {
        let mut ents: HashMap<String, usize> = HashMap::new();
        let mut rels: HashMap<String, usize> = HashMap::new();
        let mut kg = MultimodalKG::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
                return Err(DataError::Parse {
                    line: i + 1,
                    msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let intern = |map: &mut HashMap<String, usize>, names: &mut Vec<String>, s: &str| {
                *map.entry(s.to_string()).or_insert_with(|| {
                    names.push(s.to_string());
                    names.len() - 1
                })
            };
            let h = intern(&mut ents, &mut kg.entity_names, fields[0]);
            let r = intern(&mut rels, &mut kg.relation_names, fields[1]);
            let t = intern(&mut ents, &mut kg.entity_names, fields[2]);
            kg.triples.push(Triple::new(h, r, t));
        }
        if kg.triples.is_empty() {
            return Err(DataError::EmptyGraph);
        }
        let n = kg.num_entities();
        kg.visual = FeatureVariants::empty(n, 0);
        kg.textual = FeatureVariants::empty(n, 0);
        Ok(kg)
    }
}

/// Loads the structure of a graph from a tab-separated triple file.
pub fn load_triples(path: impl AsRef<Path>) -> Result<MultimodalKG, DataError> {
    let text = fs::read_to_string(path)?;
    MultimodalKG::parse_triples(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_entity_is_interned_once() {
        let kg = MultimodalKG::parse_triples("a\tr1\tb\nb\tr2\tc\n").unwrap();
        assert_eq!(kg.num_entities(), 3);
        assert_eq!(kg.num_relations(), 2);
        assert_eq!(kg.triples, vec![Triple::new(0, 0, 1), Triple::new(1, 1, 2)]);
        assert_eq!(kg.entity_names, ["a", "b", "c"]);
    }

    #[test]
    fn duplicates_are_preserved() {
        let kg = MultimodalKG::parse_triples("a\tr\tb\na\tr\tb\n").unwrap();
        assert_eq!(kg.triples.len(), 2);
    }

    #[test]
    fn short_line_reports_its_number() {
        let err = MultimodalKG::parse_triples("a\tr\tb\nc\td\n").unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            MultimodalKG::parse_triples("\n\n"),
            Err(DataError::EmptyGraph)
        ));
    }

    #[test]
    fn loads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tsv");
        std::fs::write(&p, "x\tp\ty\n").unwrap();
        assert_eq!(load_triples(&p).unwrap().triples.len(), 1);
    }
}
