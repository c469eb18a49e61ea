use cupnet::geometry::{build_mask, pairwise_distances, Mesh};
use cupnet::network::{param_count_cup, param_count_ref, solve_s};
use cupnet::synthcup::{classify, deform, generate_base_mesh, GeneratorConfig, Label, SimParams};
use cupnet::training::{r2_score, stratified_split, Matrix, Split, Standardizer};
use proptest::prelude::*;

fn points(max: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-20.0..20.0f64), 1..max)
}

/// Rotation matrix of a unit quaternion built from four free components.
fn rotation(q: [f64; 4]) -> [[f64; 3]; 3] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn labels(n_good: usize, n_defect: usize, n_cracked: usize) -> Vec<Label> {
    let mut v = vec![Label::Good; n_good];
    v.extend(vec![Label::Defect; n_defect]);
    v.extend(vec![Label::Cracked; n_cracked]);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_invariant_under_rigid_motion(
        pts in points(40),
        q in prop::array::uniform4(0.1..1.0f64),
        shift in prop::array::uniform3(-100.0..100.0f64),
        frac in 0.0..1.0f64,
    ) {
        let mesh = Mesh::new(pts.clone()).unwrap();
        let dist = pairwise_distances(&mesh);
        let alpha = frac * dist.diameter();
        let m = pts.len();
        let tie = (0..m).any(|i| (0..m).any(|j| (dist.get(i, j) - alpha).abs() <= 1e-9 * alpha.max(1.0)));
        prop_assume!(!tie);

        let r = rotation(q);
        let moved: Vec<[f64; 3]> = pts
            .iter()
            .map(|p| std::array::from_fn(|a| (0..3).map(|b| r[a][b] * p[b]).sum::<f64>() + shift[a]))
            .collect();
        let a = build_mask(&dist, alpha).unwrap();
        let b = build_mask(&pairwise_distances(&Mesh::new(moved).unwrap()), alpha).unwrap();
        prop_assert_eq!(a.pairs().collect::<Vec<_>>(), b.pairs().collect::<Vec<_>>());
    }

    #[test]
    fn distances_are_a_metric(pts in points(30)) {
        let dist = pairwise_distances(&Mesh::new(pts.clone()).unwrap());
        let m = pts.len();
        for i in 0..m {
            prop_assert_eq!(dist.get(i, i), 0.0);
            for j in 0..m {
                prop_assert_eq!(dist.get(i, j), dist.get(j, i));
                for l in 0..m {
                    let bound = dist.get(i, l) + dist.get(l, j);
                    prop_assert!(dist.get(i, j) <= bound * (1.0 + 1e-9) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn mask_count_monotone_in_alpha(pts in points(40), a in 0.0..50.0f64, b in 0.0..50.0f64) {
        let dist = pairwise_distances(&Mesh::new(pts).unwrap());
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = build_mask(&dist, lo).unwrap();
        let large = build_mask(&dist, hi).unwrap();
        prop_assert!(small.pairs().all(|(i, j)| large.contains(i, j)));
        prop_assert!(small.count() <= large.count());
    }

    #[test]
    fn parity_gap_below_one_width_step(
        k in 1u64..=20,
        m in 2u64..=400,
        h in 1u64..=7,
        frac in 0.0..1.0f64,
    ) {
        let c = m + ((m * m - m) as f64 * frac) as u64;
        let d = 3 * m;
        let n_cup = param_count_cup(k, d, m, h, c).unwrap();
        let s = solve_s(k, d, h, n_cup).unwrap();
        let n_ref = param_count_ref(k, d, h, s).unwrap();
        prop_assert!(n_ref >= n_cup);
        if s > 1 {
            let step = n_ref - param_count_ref(k, d, h, s - 1).unwrap();
            prop_assert!(n_ref - n_cup < step);
        }
    }

    #[test]
    fn r2_invariant_under_per_output_affine_maps(
        rows in 3usize..20,
        seed_vals in prop::collection::vec(-5.0..5.0f64, 60 * 2),
        scale in prop::collection::vec(0.1..10.0f64, 3),
        sign in prop::collection::vec(any::<bool>(), 3),
        shift in prop::collection::vec(-50.0..50.0f64, 3),
    ) {
        let cols = 3;
        let target: Vec<f64> = seed_vals[..rows * cols].to_vec();
        let pred: Vec<f64> = seed_vals[60..60 + rows * cols].to_vec();
        let t = Matrix::new(rows, cols, target.clone()).unwrap();
        let p = Matrix::new(rows, cols, pred.clone()).unwrap();
        let base = r2_score(&p, &t).unwrap();

        let map = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .enumerate()
                .map(|(e, x)| {
                    let c = e % cols;
                    let a = if sign[c] { scale[c] } else { -scale[c] };
                    a * x + shift[c]
                })
                .collect()
        };
        let t2 = Matrix::new(rows, cols, map(&target)).unwrap();
        let p2 = Matrix::new(rows, cols, map(&pred)).unwrap();
        let moved = r2_score(&p2, &t2).unwrap();
        prop_assert!((base - moved).abs() <= 1e-12 * base.abs().max(1.0), "{} vs {}", base, moved);
    }

    #[test]
    fn standardizer_round_trip(
        rows in 2usize..30,
        vals in prop::collection::vec(-1e3..1e3f64, 30 * 5),
        constant_col in any::<bool>(),
    ) {
        let mut inputs = vals[..rows * 2].to_vec();
        if constant_col {
            for r in 0..rows {
                inputs[r * 2] = 7.5;
            }
        }
        let split = Split {
            inputs: Matrix::new(rows, 2, inputs).unwrap(),
            targets: Matrix::new(rows, 3, vals[60..60 + rows * 3].to_vec()).unwrap(),
        };
        let st = Standardizer::fit(&split).unwrap();
        let back = st.inverse_transform(&st.transform(&split));
        for (a, b) in back.inputs.as_slice().iter().zip(split.inputs.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        for (a, b) in back.targets.as_slice().iter().zip(split.targets.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn stratified_split_partitions_each_class(
        g in 0usize..60,
        d in 0usize..60,
        c in 0usize..30,
        frac in 0.05..0.5f64,
        seed in any::<u64>(),
    ) {
        let labels = labels(g, d, c);
        prop_assume!(labels.len() >= 2);
        let (train, test) = stratified_split(&labels, frac, seed).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        let n_test = ((labels.len() as f64 * frac).round() as usize).max(1);
        prop_assert_eq!(test.len(), n_test);
        for label in Label::ALL {
            let n_c = labels.iter().filter(|&&l| l == label).count();
            let t_c = test.iter().filter(|&&i| labels[i] == label).count();
            let ideal = n_c as f64 * n_test as f64 / labels.len() as f64;
            prop_assert!((t_c as f64 - ideal).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn deform_is_lipschitz_away_from_crack_switch(
        p in prop::collection::vec(0.0..1.0f64, 9),
        dir in prop::collection::vec(-1.0..1.0f64, 9),
        eps in 1e-6..0.05f64,
    ) {
        let cfg = GeneratorConfig::default();
        let base = generate_base_mesh(cfg.radial_count, cfg.angular_count, cfg.outer_radius).unwrap();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let q: Vec<f64> = p.iter().zip(&dir).map(|(a, b)| a + eps * b / norm).collect();
        let (p, q) = (SimParams(p), SimParams(q));
        let cracked_p = cfg.damage(&p) > cfg.crack_threshold;
        let cracked_q = cfg.damage(&q) > cfg.crack_threshold;
        prop_assume!(!cracked_p && !cracked_q);

        let a = deform(&base, &p, &cfg).unwrap();
        let b = deform(&base, &q, &cfg).unwrap();
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        prop_assert!(diff <= cfg.lipschitz_bound(base.len()) * eps * (1.0 + 1e-9));
    }

    #[test]
    fn classify_is_scale_consistent(
        pts in points(20),
        disp in prop::collection::vec(prop::array::uniform3(-3.0..3.0f64), 20),
        t_good in 0.5..2.0f64,
        gap in 0.5..5.0f64,
        lambda in 0.1..10.0f64,
    ) {
        let reference = Mesh::new(pts.clone()).unwrap();
        let m = pts.len();
        let t_crack = t_good + gap;
        let delta = (0..m)
            .map(|i| disp[i].iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let near = |t: f64| (delta - t).abs() <= 1e-9 * t;
        prop_assume!(!near(t_good) && !near(t_crack));

        let coords = |scale: f64| -> Vec<f64> {
            let mut out = vec![0.0; 3 * m];
            for (i, p) in pts.iter().enumerate() {
                for a in 0..3 {
                    out[a * m + i] = p[a] + scale * disp[i][a];
                }
            }
            out
        };
        let before = classify(&coords(1.0), &reference, t_good, t_crack).unwrap();
        let after = classify(&coords(lambda), &reference, lambda * t_good, lambda * t_crack).unwrap();
        prop_assert_eq!(before, after);
    }
}
