use std::f64::consts::PI;

use super::KgeError;
use crate::numcore::{rotate_into, Matrix, NumError, Rng};

/// `gamma - ||h o e^{i phase} - t||_2`.
pub fn rotate_score(head: &[f64], phase: &[f64], tail: &[f64], gamma: f64) -> Result<f64, KgeError> {
    if head.len() != tail.len() || head.len() != 2 * phase.len() {
        return Err(NumError::Dimension(format!(
            "rotate_score: head {}, phase {}, tail {}",
            head.len(),
            phase.len(),
            tail.len()
        ))
        .into());
    }
    let mut rot = vec![0.0; head.len()];
    rotate_into(head, phase, &mut rot);
    Ok(gamma - dist(&rot, tail))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Scores of `(head, relation_row, e)` for every entity `e`.
pub fn score_all_tails(ent: &Matrix, rel: &Matrix, head: usize, relation_row: usize, gamma: f64) -> Vec<f64> {
    let mut rot = vec![0.0; ent.cols()];
    rotate_into(ent.row(head), rel.row(relation_row), &mut rot);
    (0..ent.rows()).map(|e| gamma - dist(&rot, ent.row(e))).collect()
}

/// Entity table uniform in `[-b, b]` with `b = gamma / dim`.
pub fn init_entities(n: usize, dim: usize, gamma: f64, rng: &mut Rng) -> Matrix {
    let b = gamma / dim.max(1) as f64;
    rng.uniform_matrix(n, dim, -b, b)
}

/// Relation table with inverse rows, phases uniform in `[-pi, pi]`.
pub fn init_relations(n_rel: usize, entity_dim: usize, rng: &mut Rng) -> Matrix {
    rng.uniform_matrix(2 * n_rel, entity_dim / 2, -PI, PI)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_rotation_of_self_scores_gamma() {
        let h = [0.3, -0.2, 1.0, 0.5];
        assert_eq!(rotate_score(&h, &[0.0, 0.0], &h, 9.0).unwrap(), 9.0);
    }

    #[test]
    fn quarter_turn_maps_one_to_i() {
        let s = rotate_score(&[1.0, 0.0], &[PI / 2.0], &[0.0, 1.0], 9.0).unwrap();
        assert!((s - 9.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(rotate_score(&[1.0, 0.0], &[0.1, 0.2], &[0.0, 1.0], 9.0).is_err());
    }

    #[test]
    fn common_rotation_preserves_score() {
        let mut rng = Rng::new(4);
        for _ in 0..100 {
            let h: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let t: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let r: Vec<f64> = (0..4).map(|_| rng.uniform_range(-PI, PI)).collect();
            let phi: Vec<f64> = (0..4).map(|_| rng.uniform_range(-PI, PI)).collect();
            let mut h2 = vec![0.0; 8];
            let mut t2 = vec![0.0; 8];
            rotate_into(&h, &phi, &mut h2);
            rotate_into(&t, &phi, &mut t2);
            let a = rotate_score(&h, &r, &t, 9.0).unwrap();
            let b = rotate_score(&h2, &r, &t2, 9.0).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn init_shapes_and_ranges() {
        let mut rng = Rng::new(0);
        let e = init_entities(10, 8, 9.0, &mut rng);
        assert_eq!(e.shape(), (10, 8));
        assert!(e.max_abs() <= 9.0 / 8.0);
        let r = init_relations(3, 8, &mut rng);
        assert_eq!(r.shape(), (6, 4));
        assert!(r.max_abs() <= PI);
    }
}
