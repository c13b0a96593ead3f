use rand::Rng;

use super::config::DelayModel;
use crate::model::NodeId;

/// Samples a delay as a fraction of `d`, in `(0, 1]`.
pub fn sample_fraction<R: Rng>(model: &DelayModel, from: NodeId, to: NodeId, rng: &mut R) -> f64 {
    // 1 - u lies in (0, 1] for u in [0, 1).
    match model {
        DelayModel::Uniform { epsilon } => epsilon + (1.0 - epsilon) * (1.0 - rng.random::<f64>()),
        DelayModel::Constant { fraction } => *fraction,
        DelayModel::Bimodal { p_fast, fast_max, slow_min } => {
            if rng.random::<f64>() < *p_fast {
                fast_max * (1.0 - rng.random::<f64>())
            } else {
                slow_min + (1.0 - slow_min) * (1.0 - rng.random::<f64>())
            }
        }
        DelayModel::Scripted { rules, fallback } => rules
            .iter()
            .find(|r| r.from.is_none_or(|f| f == from) && r.to.is_none_or(|t| t == to))
            .map(|r| r.delay)
            .unwrap_or_else(|| sample_fraction(fallback, from, to, rng)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::DelayRule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (NodeId::server(0), NodeId::client(1));
        for model in [
            DelayModel::default(),
            DelayModel::Constant { fraction: 1.0 },
            DelayModel::Bimodal { p_fast: 0.3, fast_max: 0.05, slow_min: 0.9 },
        ] {
            for _ in 0..10_000 {
                let x = sample_fraction(&model, a, b, &mut rng);
                assert!(x > 0.0 && x <= 1.0, "{model:?} gave {x}");
            }
        }
    }

    #[test]
    fn scripted_rules_match_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b, c) = (NodeId::server(0), NodeId::client(1), NodeId::client(2));
        let model = DelayModel::Scripted {
            rules: vec![
                DelayRule { from: Some(a), to: Some(b), delay: 0.01 },
                DelayRule { from: None, to: Some(b), delay: 1.0 },
            ],
            fallback: Box::new(DelayModel::Constant { fraction: 0.5 }),
        };
        assert_eq!(sample_fraction(&model, a, b, &mut rng), 0.01);
        assert_eq!(sample_fraction(&model, c, b, &mut rng), 1.0);
        assert_eq!(sample_fraction(&model, b, c, &mut rng), 0.5);
    }
}
