use proptest::prelude::*;
use spcor_core::fusion::{fuse, reliability_pool, FusionDims, FusionParams, RobotObservation};
use spcor_core::numkit::softmax;
use spcor_core::rng::SeededRng;
use spcor_core::Tensor2;

fn dims(n_heads: usize) -> FusionDims {
    FusionDims {
        d_token: 5,
        d_state: 6,
        d_spectral: 4,
        d_pose: 3,
        d_belief: 5,
        k: 8,
        n_low: 5,
        max_robots: 8,
        n_heads,
    }
}

fn team(rng: &mut SeededRng, dims: &FusionDims, n: usize) -> Vec<RobotObservation<f64>> {
    let mut roles: Vec<usize> = (0..dims.max_robots).collect();
    rng.shuffle(&mut roles);
    (0..n)
        .map(|r| RobotObservation {
            role: roles[r],
            tokens: Tensor2::new(
                dims.k,
                dims.d_token,
                (0..dims.k * dims.d_token).map(|_| rng.normal()).collect(),
            )
            .unwrap(),
            pose_summary: core::array::from_fn(|_| rng.normal()),
        })
        .collect()
}

fn random_vecs(rng: &mut SeededRng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| scale * rng.normal()).collect()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pooling_weights_sum_to_one(seed in any::<u64>(), n in 1usize..=8) {
        let mut rng = SeededRng::new(seed);
        let p = FusionParams::<f64>::init(dims(1), &mut rng).unwrap();
        let mu = random_vecs(&mut rng, n, 6, 1.0);
        let sigma: Vec<Vec<f64>> = random_vecs(&mut rng, n, 6, 3.0)
            .into_iter()
            .map(|s| s.into_iter().map(f64::abs).collect())
            .collect();
        let (b, _) = reliability_pool(&mu, &sigma, &p).unwrap();
        prop_assert!((b.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        prop_assert!(b.weights.iter().all(|&w| w > 0.0));
        // the same holds after the whole forward pass at 32 bits
        let p32 = FusionParams::<f32>::init(dims(1), &mut SeededRng::new(seed)).unwrap();
        let t32: Vec<RobotObservation<f32>> = team(&mut rng, &dims(1), n)
            .into_iter()
            .map(|o| RobotObservation {
                role: o.role,
                tokens: Tensor2::new(o.tokens.rows(), o.tokens.cols(), o.tokens.data().iter().map(|&v| v as f32).collect()).unwrap(),
                pose_summary: o.pose_summary.map(|v| v as f32),
            })
            .collect();
        let (b32, _) = fuse(&p32, &t32).unwrap();
        prop_assert!((b32.weights.iter().map(|&w| w as f64).sum::<f64>() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn softmax_is_shift_invariant(seed in any::<u64>(), n in 1usize..=8, shift in -1e3f64..1e3) {
        let mut rng = SeededRng::new(seed);
        let v: Vec<f64> = (0..n).map(|_| 5.0 * rng.normal()).collect();
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let a = softmax(&v).unwrap();
        let b = softmax(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn weight_falls_strictly_as_sigma_grows(seed in any::<u64>(), n in 2usize..=8, factor in 1.01f64..4.0) {
        let mut rng = SeededRng::new(seed);
        let p = FusionParams::<f64>::init(dims(1), &mut rng).unwrap();
        let mu = random_vecs(&mut rng, n, 6, 1.0);
        let sigma: Vec<Vec<f64>> = random_vecs(&mut rng, n, 6, 0.5)
            .into_iter()
            .map(|s| s.into_iter().map(|x| x.abs() + 0.01).collect())
            .collect();
        let r = rng.below(n);
        let mut wider = sigma.clone();
        wider[r].iter_mut().for_each(|s| *s *= factor);
        prop_assert!(norm(&wider[r]) > norm(&sigma[r]));
        let (before, _) = reliability_pool(&mu, &sigma, &p).unwrap();
        let (after, _) = reliability_pool(&mu, &wider, &p).unwrap();
        prop_assert!(after.weights[r] < before.weights[r]);
        for j in (0..n).filter(|&j| j != r) {
            prop_assert!(after.weights[j] > before.weights[j]);
        }
        // ordering of weights is the reverse ordering of norms
        for a in 0..n {
            for b in 0..n {
                if norm(&sigma[a]) < norm(&sigma[b]) {
                    prop_assert!(before.weights[a] > before.weights[b]);
                }
            }
        }
    }

    #[test]
    fn belief_is_invariant_to_joint_robot_permutation(
        seed in any::<u64>(),
        n in 1usize..=8,
        heads in prop::sample::select(vec![1usize, 2, 3]),
    ) {
        let mut rng = SeededRng::new(seed);
        let d = dims(heads);
        let p = FusionParams::<f64>::init(d, &mut rng).unwrap();
        let robots = team(&mut rng, &d, n);
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let permuted: Vec<_> = order.iter().map(|&i| robots[i].clone()).collect();
        let (z, _) = fuse(&p, &robots).unwrap();
        let (zp, _) = fuse(&p, &permuted).unwrap();
        for (a, b) in z.data.iter().zip(&zp.data) {
            prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
        for (k, &i) in order.iter().enumerate() {
            prop_assert!((zp.weights[k] - z.weights[i]).abs() <= 1e-12);
        }
    }
}

// Alternative fusion rules used only as contrasts: each combines the same
// updated means differently and must not coincide with reliability pooling.

fn concat_project(mu: &[Vec<f64>], rng: &mut SeededRng) -> Vec<f64> {
    let flat: Vec<f64> = mu.iter().flatten().copied().collect();
    let d = mu[0].len();
    (0..d)
        .map(|_| flat.iter().map(|x| x * rng.normal() / (flat.len() as f64).sqrt()).sum())
        .collect()
}

fn add(mu: &[Vec<f64>]) -> Vec<f64> {
    (0..mu[0].len()).map(|j| mu.iter().map(|m| m[j]).sum()).collect()
}

fn multiply(mu: &[Vec<f64>]) -> Vec<f64> {
    (0..mu[0].len()).map(|j| mu.iter().map(|m| m[j]).product()).collect()
}

fn self_attention(mu: &[Vec<f64>]) -> Vec<f64> {
    let d = mu[0].len();
    let scale = (d as f64).sqrt();
    let mut out = vec![0.0; d];
    for q in mu {
        let logits: Vec<f64> = mu.iter().map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / scale).collect();
        let a = softmax(&logits).unwrap();
        for (w, v) in a.iter().zip(mu) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += w * x / mu.len() as f64;
            }
        }
    }
    out
}

#[test]
fn alternative_fusion_rules_give_different_beliefs() {
    for seed in 0..20u64 {
        let mut rng = SeededRng::new(seed);
        let d = dims(2);
        let p = FusionParams::<f64>::init(d, &mut rng).unwrap();
        let n = 2 + (seed as usize % 4);
        let robots = team(&mut rng, &d, n);
        let (z, cache) = fuse(&p, &robots).unwrap();
        let mu_hat = cache.updated_means();
        let variants = [
            ("concatenation", concat_project(mu_hat, &mut rng)),
            ("addition", add(mu_hat)),
            ("multiplication", multiply(mu_hat)),
            ("self-attention", self_attention(mu_hat)),
        ];
        for (name, pooled) in variants {
            let alt = p.w_b.forward(&pooled).unwrap();
            let gap = alt.iter().zip(&z.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(gap > 1e-6, "{name} coincides with reliability pooling (seed {seed})");
        }
    }
}
