use proptest::prelude::*;
use rlsa2c_core::envsim::compute_q_targets;
use rlsa2c_core::network::{Activation, Activations, ConvGeometry, Layer};
use rlsa2c_core::numerics::{im2col, l2_clip, mat_from_vec, vec_rowmajor, Tensor4};
use rlsa2c_core::optim::LinearDecay;
use rlsa2c_core::policy::{softmax, softmax_entropy, softmax_score};
use rlsa2c_core::{KfacActorState, Mat, ScheduleState, SpdMat, TrainConfig};

fn mat_strategy(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-scale..scale, rows * cols)
        .prop_map(move |d| Mat::from_vec(rows, cols, d).unwrap())
}

fn sized_mat(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Mat> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| mat_strategy(r, c, 3.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn p_stays_spd_and_denominators_exceed_lambda(
        seed_inputs in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 5), 1..200),
        lambda in prop::sample::select(vec![1.0, 0.999]),
        k in 0.001f64..1.0,
    ) {
        let mut p = SpdMat::identity(5);
        for x in &seed_inputs {
            let d = p.rank_one_update(x, k, lambda).unwrap();
            prop_assert!(d >= lambda);
        }
        prop_assert!(p.symmetry_error() <= 1e-9);
        prop_assert!(p.is_positive_definite());
    }

    #[test]
    fn averaged_update_keeps_spd(batches in prop::collection::vec(mat_strategy(6, 4, 2.0), 1..30), k in 0.01f64..0.5) {
        let mut p = SpdMat::identity(4);
        for b in &batches {
            let d = p.averaged_rank_one_update(b, k, 1.0).unwrap();
            prop_assert!(d.iter().all(|&v| v >= 1.0));
        }
        prop_assert!(p.is_positive_definite());
    }

    #[test]
    fn kfac_factors_stay_spd(x in mat_strategy(10, 5, 1.0), g in mat_strategy(10, 3, 1.0), a in prop::collection::vec(-1.0f64..1.0, 10)) {
        let mut s = KfacActorState::new(5, 3, LinearDecay::constant(0.01), 1.0);
        for _ in 0..20 {
            let info = s.w_update(&x, &g, &a, 0.1).unwrap();
            prop_assert!(info.min_denominator_p1 >= 1.0 && info.min_denominator_p2 >= 1.0);
        }
        prop_assert!(s.p1.is_positive_definite() && s.p2.is_positive_definite());
        prop_assert!(s.w.is_finite());
    }

    #[test]
    fn vec_round_trip_is_exact(m in sized_mat(8, 8)) {
        let back = mat_from_vec(&vec_rowmajor(&m), m.rows(), m.cols()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn softmax_rows_and_scores(logits in sized_mat(6, 6), pick in prop::collection::vec(0usize..64, 6)) {
        let p = softmax(&logits);
        let actions: Vec<usize> = (0..logits.rows()).map(|i| pick[i] % logits.cols()).collect();
        let g = softmax_score(&logits, &actions).unwrap();
        let h = softmax_entropy(&logits);
        for i in 0..logits.rows() {
            prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(g.row(i).iter().sum::<f64>().abs() <= 1e-12);
            prop_assert!(h[i] >= -1e-12 && h[i] <= (logits.cols() as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn zero_discount_gives_rewards(n in 1usize..6, t in 1usize..8, seed in any::<u64>()) {
        let r: Vec<f64> = (0..n * t).map(|i| ((seed.wrapping_add(i as u64) % 97) as f64) / 10.0 - 4.0).collect();
        let d: Vec<f64> = (0..n * t).map(|i| ((seed >> (i % 60)) & 1) as f64).collect();
        let q = compute_q_targets(&r, &d, &vec![7.0; n], n, t, 0.0);
        prop_assert_eq!(q, r);
    }

    #[test]
    fn rewards_after_a_done_do_not_leak(
        n in 1usize..5,
        t in 2usize..8,
        rewards in prop::collection::vec(-1.0f64..1.0, 40),
        done_step in 0usize..7,
        noise in -5.0f64..5.0,
        gamma in 0.5f64..1.0,
    ) {
        let done_step = done_step % (t - 1);
        let r: Vec<f64> = rewards[..n * t].to_vec();
        let mut d = vec![0.0; n * t];
        for i in 0..n {
            d[done_step * n + i] = 1.0;
        }
        let boot = vec![1.5; n];
        let q = compute_q_targets(&r, &d, &boot, n, t, gamma);
        let mut r2 = r.clone();
        let mut boot2 = boot.clone();
        for v in &mut r2[(done_step + 1) * n..] {
            *v += noise;
        }
        boot2.iter_mut().for_each(|b| *b += noise);
        let q2 = compute_q_targets(&r2, &d, &boot2, n, t, gamma);
        prop_assert_eq!(&q[..(done_step + 1) * n], &q2[..(done_step + 1) * n]);
    }

    #[test]
    fn schedules_bounded_and_non_increasing(t in 0u64..200_000, dt in 0u64..50_000) {
        let s = ScheduleState::default();
        let (k0, k1) = (s.schedule_k(t), s.schedule_k(t + dt));
        let (m0, m1) = (s.schedule_mu(t), s.schedule_mu(t + dt));
        prop_assert!(k1 <= k0 && m1 <= m0);
        prop_assert!(k0 <= s.k.init && k1 >= s.k.floor);
        prop_assert!(m0 <= s.mu.init && m1 >= s.mu.floor);
    }

    #[test]
    fn clipping_bounds_norm_and_keeps_direction(a in prop::collection::vec(-10.0f64..10.0, 1..20), b in prop::collection::vec(-10.0f64..10.0, 1..20), max in 0.01f64..5.0) {
        let (mut a2, mut b2) = (a.clone(), b.clone());
        let norm = l2_clip(&mut [&mut a2, &mut b2], max);
        let after = a2.iter().chain(&b2).map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(after <= max * (1.0 + 1e-12));
        let scale = if norm > max { max / norm } else { 1.0 };
        for (x, y) in a.iter().chain(&b).zip(a2.iter().chain(&b2)) {
            prop_assert!((x * scale - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn critic_gradient_identity(x in mat_strategy(12, 5, 1.0), psi in mat_strategy(5, 1, 1.0), q in prop::collection::vec(-3.0f64..3.0, 12)) {
        let m = x.rows() as f64;
        let v = x.matmul(&psi).unwrap();
        let mut per_sample = vec![0.0; 5];
        for i in 0..x.rows() {
            for j in 0..5 {
                per_sample[j] += x[(i, j)] * (q[i] - v[(i, 0)]) / m;
            }
        }
        let resid = Mat::from_fn(12, 1, |i, _| q[i] - v[(i, 0)]);
        let matrix_form = x.t_matmul(&resid).unwrap();
        for j in 0..5 {
            prop_assert!((per_sample[j] - matrix_form[(j, 0)] / m).abs() <= 1e-12);
        }
    }

    #[test]
    fn config_text_round_trips(seed in any::<u64>(), workers in 1usize..64, eta in 0.0f64..1.0, lambda in 0.5f64..=1.0) {
        let mut c = TrainConfig::parse("env = pointmass\nalgorithm = rlsna2c\n").unwrap();
        c.seed = seed;
        c.workers = workers;
        c.eta = eta;
        c.lambda = lambda;
        let back = TrainConfig::parse(&c.to_text()).unwrap();
        prop_assert_eq!(back, c);
    }
}

fn direct_conv(x: &Tensor4, kernel: &Tensor4, stride: usize) -> Vec<f64> {
    let (ci, co, kh, kw) = kernel.dims();
    let oh = (x.h - kh) / stride + 1;
    let ow = (x.w - kw) / stride + 1;
    let mut out = Vec::with_capacity(x.n * co * oh * ow);
    for n in 0..x.n {
        for o in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = 0.0;
                    for c in 0..ci {
                        for a in 0..kh {
                            for b in 0..kw {
                                s += x.at(n, c, i * stride + a, j * stride + b)
                                    * kernel.at(c, o, a, b);
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn im2col_convolution_matches_direct(
        (n, c, h, w) in (1usize..3, 1usize..4, 3usize..9, 3usize..9),
        (co, k, stride) in (1usize..4, 1usize..4, 1usize..3),
        seed in any::<u64>(),
    ) {
        prop_assume!(k <= h && k <= w && (h - k) % stride == 0 && (w - k) % stride == 0);
        let val = |i: usize| (((seed.wrapping_mul(31).wrapping_add(i as u64 * 2654435761)) % 2001) as f64) / 1000.0 - 1.0;
        let x = Tensor4::from_vec(n, c, h, w, (0..n * c * h * w).map(val).collect()).unwrap();
        let kernel = Tensor4::from_vec(c, co, k, k, (0..c * co * k * k).map(|i| val(i + 7919)).collect()).unwrap();
        let geometry = ConvGeometry::new((c, h, w), co, (k, k), stride).unwrap();
        let mut layer = Layer::conv(geometry, Activation::Identity);
        layer.set_kernel(&kernel).unwrap();
        let cache = layer.forward(Activations::Image(x.clone())).unwrap();
        let expected = direct_conv(&x, &kernel, stride);
        let got = cache.output.data();
        prop_assert_eq!(got.len(), expected.len());
        for (a, b) in got.iter().zip(&expected) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        // The unfolded input of the first sample is what the layer cached.
        let cols = im2col(&x, 0, k, k, stride).unwrap();
        prop_assert_eq!(cols.shape(), (c * k * k, geometry.out_pixels()));
    }
}
