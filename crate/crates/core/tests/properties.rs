mod common;

use common::{random_sequence, tiny_config};
use mobunc::evalkit::{auroc, rejection_eval, rejection_keep};
use mobunc::scoring::{agent_score, percentile_transform, TrainIndex};
use mobunc::seqmodel::{attention, Dropout, DualTransformer, Matrix, N_TOKENS};
use mobunc::uncertainty::{angle_to_minutes, circular_minutes, eu_numeric, loss_numeric, mc_sample, time_angle_encode, time_angle_recover};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_rows_are_stochastic_and_skip_padding(
        seed in any::<u64>(),
        nq in 1usize..7,
        nk in 1usize..9,
        d in 1usize..9,
        scale in 0.1f64..6.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_matrix(&mut rng, nq, d, scale);
        let k = random_matrix(&mut rng, nk, d, scale);
        let v = random_matrix(&mut rng, nk, 3, 1.0);
        let mut valid: Vec<bool> = (0..nk).map(|_| rng.random_bool(0.7)).collect();
        valid[rng.random_range(0..nk)] = true;
        let out = attention(&q, &k, &v, Some(&valid)).unwrap();
        for i in 0..nq {
            let row = out.weights.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for (w, ok) in row.iter().zip(&valid) {
                prop_assert!(*w >= 0.0);
                if !ok {
                    prop_assert!(*w < 1e-9);
                }
            }
        }
    }

    #[test]
    fn feature_level_stack_commutes_with_token_order(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let cfg = tiny_config();
        let model = DualTransformer::new(cfg.clone(), seed).unwrap();
        let seq = random_sequence(2, cfg.n_poi, seed ^ 0x55);
        let d = cfg.d_model;
        let tokens = model.tokenize_features(&seq.events[1], 1, Dropout::Off).unwrap();
        let mut perm: Vec<usize> = (0..N_TOKENS).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut ChaCha8Rng::seed_from_u64(perm_seed));
        let permuted: Vec<f64> = perm.iter().flat_map(|&p| tokens[p * d..(p + 1) * d].to_vec()).collect();
        let base = model.feature_level_encode(&tokens).unwrap();
        let moved = model.feature_level_encode(&permuted).unwrap();
        for (slot, &p) in perm.iter().enumerate() {
            for j in 0..d {
                prop_assert_eq!(moved[slot * d + j], base[p * d + j]);
            }
        }
    }

    #[test]
    fn regression_loss_is_smallest_at_the_squared_residual(r in 1e-3f64..1e3, step in 1e-3f64..2.0) {
        let best = (r * r).ln();
        let at = |lv: f64| loss_numeric(r, 0.0, lv);
        prop_assert!(at(best) <= at(best + step));
        prop_assert!(at(best) <= at(best - step));
    }

    #[test]
    fn numeric_eu_ignores_a_common_shift(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let cfg = tiny_config();
        let model = DualTransformer::new(cfg.clone(), seed).unwrap();
        let seq = random_sequence(5, cfg.n_poi, seed);
        let s = mc_sample(&model, &seq, 3, 6, seed).unwrap();
        let mut moved = s.clone();
        for o in &mut moved.outputs {
            for m in &mut o.numeric_mean {
                *m += shift;
            }
        }
        for f in 0..mobunc::seqmodel::N_NUMERIC {
            let a = eu_numeric(&s, f);
            let b = eu_numeric(&moved, f);
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn time_of_day_survives_the_circle(minutes in 0.0f64..1440.0, radius in 0.1f64..10.0) {
        let (x, y) = time_angle_encode(minutes, radius);
        let back = angle_to_minutes(time_angle_recover(x, y).unwrap());
        prop_assert!(circular_minutes(back, minutes) < 1e-6);
    }

    #[test]
    fn auroc_ignores_monotone_transforms(seed in any::<u64>(), n in 4usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let squashed: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() / (1.0 + (2.0 * s).exp()) * 7.0 - 1.0).collect();
        let a = auroc(&scores, &labels).unwrap();
        prop_assert!((a - auroc(&squashed, &labels).unwrap()).abs() < 1e-12);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((a + auroc(&flipped, &labels).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn percentile_is_monotone_and_bounded(seed in any::<u64>(), n in 1usize..60, a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reference: Vec<f64> = (0..n).map(|_| (rng.random_range(-4.0f64..4.0) * 4.0).round() / 4.0).collect();
        reference.sort_by(f64::total_cmp);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let pl = percentile_transform(lo, &reference).unwrap();
        let ph = percentile_transform(hi, &reference).unwrap();
        prop_assert!((0.0..=1.0).contains(&pl) && (0.0..=1.0).contains(&ph));
        prop_assert!(pl <= ph);
    }

    #[test]
    fn agent_score_stays_in_unit_range(scores in prop::collection::vec(0.0f64..=1.0, 1..30)) {
        let s = agent_score(&scores).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(scores.iter().all(|&x| x <= s));
    }

    #[test]
    fn knn_distance_matches_brute_force_and_rotation(seed in any::<u64>(), n in 5usize..60, k in 1usize..5, angle in 0.0f64..6.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let q = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let (c, s) = (angle.cos(), angle.sin());
        let rot = |p: [f64; 2]| [c * p[0] - s * p[1], s * p[0] + c * p[1]];
        let mut plain = TrainIndex::new(2);
        let mut turned = TrainIndex::new(2);
        for (i, r) in rows.iter().enumerate() {
            plain.push(i as u64, r).unwrap();
            turned.push(i as u64, &rot(*r)).unwrap();
        }
        let mut brute: Vec<f64> = rows.iter().map(|r| ((r[0] - q[0]).powi(2) + (r[1] - q[1]).powi(2)).sqrt()).collect();
        brute.sort_by(f64::total_cmp);
        let want = brute[..k].iter().sum::<f64>() / k as f64;
        let got = plain.knn_distance(&q, k).unwrap();
        prop_assert!((got - want).abs() < 1e-12);
        prop_assert!((turned.knn_distance(&rot(q), k).unwrap() - got).abs() < 1e-9);
    }

    #[test]
    fn rejecting_by_error_never_raises_mae(seed in any::<u64>(), n in 2usize..100, f in 0.0f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let errors: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let full = rejection_eval(&errors, &errors, 0.0, seed).unwrap();
        let part = rejection_eval(&errors, &errors, f, seed).unwrap();
        prop_assert_eq!(full.kept, n);
        prop_assert_eq!(part.kept, n - (f * n as f64 + 1e-9).floor() as usize);
        prop_assert!(part.mae <= full.mae + 1e-12);
        let keep = rejection_keep(&errors, f, seed).unwrap();
        prop_assert!(keep.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn null_auroc_stays_near_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (pos, neg) = (400, 1600);
    let scores: Vec<f64> = (0..pos + neg).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels: Vec<bool> = (0..pos + neg).map(|i| i < pos).collect();
    let a = auroc(&scores, &labels).unwrap();
    let sd = mobunc::evalkit::auroc_null_std(pos, neg);
    assert!((a - 0.5).abs() < 3.0 * sd, "auroc {a}, sd {sd}");
}
