use proptest::prelude::*;

use flowvae::classifiers::{argmax, softmax_xent};
use flowvae::data::{
    balance_classes, read_csv, sample_bounds, sample_standard, scale_log, scale_minmax,
    scale_standard, signed_log, split_train_val, write_csv, Dataset, FeatureSchema, BENIGN,
    MALICIOUS,
};
use flowvae::metrics::{
    binary_collapse, per_class_accuracy, read_log_from, write_log_to, ConfusionMatrix, Split,
    TrainLogRow,
};
use flowvae::nn::{
    activation_forward, receptive_field, Activation, BatchNorm1D, Conv1DLayer, Module, Padding,
    ParamKind, Parameterized,
};
use flowvae::optim::{adam_step, l2_penalty, AdamState, OptimHyper};
use flowvae::preset::{presets, total_loss};
use flowvae::vae::{kl_loss, reconstruction_loss, VaeModel};
use flowvae::{RngStream, Tensor};

fn finite() -> impl Strategy<Value = f64> {
    -50.0..50.0f64
}

fn dataset(cols: Vec<Vec<f64>>, labels: Vec<usize>) -> Dataset {
    let n = labels.len();
    let schema = FeatureSchema::new(
        (0..cols.len()).map(|i| format!("f{i}")).collect(),
        vec![BENIGN.into(), MALICIOUS.into()],
    )
    .unwrap();
    Dataset::new(schema, cols, labels, vec![None; n], vec![None; n]).unwrap()
}

prop_compose! {
    fn arb_dataset(max_rows: usize)(w in 1usize..4, n in 1usize..max_rows)
        (cols in prop::collection::vec(prop::collection::vec(finite(), n), w),
         labels in prop::collection::vec(0usize..2, n)) -> Dataset {
        dataset(cols, labels)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn minmax_preserves_records_and_range(ds in arb_dataset(30)) {
        let b = sample_bounds(&[&ds]).unwrap();
        let s = scale_minmax(&ds, &b).unwrap();
        prop_assert_eq!(s.len(), ds.len());
        prop_assert_eq!(s.width(), ds.width());
        prop_assert_eq!(s.labels(), ds.labels());
        prop_assert!(s.columns().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn standard_scores_have_zero_mean_unit_std(ds in arb_dataset(30)) {
        let stats = sample_standard(&ds).unwrap();
        let s = scale_standard(&ds, &stats, true).unwrap();
        let n = s.len() as f64;
        for (j, col) in s.columns().iter().enumerate() {
            let mean = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-9, "mean {}", mean);
            if stats[j].1 > 1e-9 {
                prop_assert!((sd - 1.0).abs() < 1e-9, "std {}", sd);
            } else {
                prop_assert!(col.iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn log_is_odd_and_strictly_monotone(a in -1e12..1e12f64, b in -1e12..1e12f64) {
        prop_assert_eq!(signed_log(-a), -signed_log(a));
        if a < b {
            prop_assert!(signed_log(a) < signed_log(b));
        }
    }

    #[test]
    fn log_scaling_preserves_records(ds in arb_dataset(30)) {
        let s = scale_log(&ds);
        prop_assert_eq!(s.len(), ds.len());
        prop_assert_eq!(s.width(), ds.width());
        prop_assert_eq!(s.labels(), ds.labels());
    }

    #[test]
    fn balancing_equalizes(ds in arb_dataset(40), seed in any::<u64>()) {
        let counts = ds.class_counts();
        prop_assume!(counts[0] >= counts[1] && counts[1] > 0);
        let b = balance_classes(&ds, &mut RngStream::new(seed)).unwrap();
        let c = b.class_counts();
        prop_assert_eq!(c[0], c[1]);
        prop_assert_eq!(c[1], counts[1]);
    }

    #[test]
    fn split_is_disjoint_exhaustive(n in 1usize..60, seed in any::<u64>()) {
        let labels: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % 5 % 2).collect();
        // Row ids ride along as the only feature.
        let ds = dataset(vec![(0..n).map(|i| i as f64).collect()], labels);
        let (tr, va) = split_train_val(&ds, 0.6, &mut RngStream::new(seed)).unwrap();
        prop_assert_eq!(tr.len() + va.len(), n);
        let mut ids: Vec<f64> = tr.column(0).iter().chain(va.column(0)).copied().collect();
        ids.sort_by(f64::total_cmp);
        prop_assert_eq!(ids, (0..n).map(|i| i as f64).collect::<Vec<_>>());
        for class in 0..2 {
            let total = ds.class_counts()[class];
            let got = tr.class_counts()[class];
            prop_assert!((got as f64 - 0.6 * total as f64).abs() <= 1.0, "class {} {} of {}", class, got, total);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn csv_round_trip_and_column_order(ds in arb_dataset(20), seed in any::<u64>()) {
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let (back, _) = read_csv(buf.as_slice(), ds.schema()).unwrap();
        prop_assert_eq!(back.columns(), ds.columns());
        prop_assert_eq!(back.labels(), ds.labels());

        // Same records with the columns written in a shuffled order.
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
        let perm = RngStream::new(seed).permutation(rows[0].len());
        let shuffled: String = rows
            .iter()
            .map(|r| perm.iter().map(|&i| r[i]).collect::<Vec<_>>().join(",") + "\n")
            .collect();
        let (again, _) = read_csv(shuffled.as_bytes(), ds.schema()).unwrap();
        prop_assert_eq!(again.columns(), ds.columns());
        prop_assert_eq!(again.labels(), ds.labels());
    }

    #[test]
    fn softmax_rows_are_distributions(row in prop::collection::vec(-15.0..15.0f64, 1..8)) {
        let t = Tensor::new(vec![1, row.len()], row).unwrap();
        let p = activation_forward(&t, Activation::Softmax);
        prop_assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.len() == 1 || p.data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn argmax_shift_invariant(row in prop::collection::vec(-30.0..30.0f64, 2..8), c in -100.0..100.0f64) {
        let shifted: Vec<f64> = row.iter().map(|v| v + c).collect();
        let a = activation_forward(&Tensor::new(vec![1, row.len()], row.clone()).unwrap(), Activation::Softmax);
        let b = activation_forward(&Tensor::new(vec![1, row.len()], shifted).unwrap(), Activation::Softmax);
        prop_assert_eq!(argmax(a.data()), argmax(b.data()));
    }

    #[test]
    fn xent_nonnegative(row in prop::collection::vec(-30.0..30.0f64, 2..6), l in 0usize..2) {
        let t = Tensor::new(vec![1, row.len()], row).unwrap();
        prop_assert!(softmax_xent(&t, &[l]).unwrap().0 >= 0.0);
    }

    #[test]
    fn receptive_field_monotone(
        k in prop::collection::vec(1usize..9, 1..4),
        s in prop::collection::vec(1usize..4, 4),
        i in 0usize..4,
    ) {
        let s = &s[..k.len()];
        let i = i % k.len();
        let base = receptive_field(&k, s).unwrap();
        let mut k2 = k.clone();
        k2[i] += 1;
        prop_assert!(receptive_field(&k2, s).unwrap() >= base);
        let mut s2 = s.to_vec();
        s2[i] += 1;
        prop_assert!(receptive_field(&k, &s2).unwrap() >= base);
    }

    #[test]
    fn unit_kernel_conv_is_identity(b in 1usize..4, l in 1usize..9, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let conv = Conv1DLayer::from_parts(
            Tensor::filled(&[1, 1, 1], 1.0),
            Tensor::zeros(&[1]),
            1,
            Padding::Valid,
            Activation::Linear,
        )
        .unwrap();
        let x = rng.normal_tensor(&[b, l, 1]);
        prop_assert_eq!(conv.infer(&x).unwrap(), x);
    }

    #[test]
    fn batchnorm_infer_ignores_batch_composition(seed in any::<u64>(), c in 1usize..4, n in 2usize..6) {
        let mut rng = RngStream::new(seed);
        let mut bn = BatchNorm1D::new(c);
        bn.gamma.value = rng.normal_tensor(&[c]);
        bn.beta.value = rng.normal_tensor(&[c]);
        bn.running_mean = (0..c).map(|_| rng.normal()).collect();
        bn.running_var = (0..c).map(|_| rng.uniform() + 0.1).collect();
        let x = rng.normal_tensor(&[n, c]);
        let alone = bn.infer(&x.gather_rows(&[0]).unwrap()).unwrap();
        let batch = bn.infer(&x).unwrap();
        prop_assert_eq!(alone.row(0), batch.row(0));
    }

    #[test]
    fn kl_nonnegative(mu in prop::collection::vec(-5.0..5.0f64, 1..8), seed in any::<u64>()) {
        let n = mu.len();
        let lv: Vec<f64> = { let mut r = RngStream::new(seed); (0..n).map(|_| r.normal() * 2.0).collect() };
        let kl = kl_loss(&Tensor::new(vec![1, n], mu).unwrap(), &Tensor::new(vec![1, n], lv).unwrap()).unwrap();
        prop_assert!(kl >= 0.0);
    }

    #[test]
    fn reconstruction_symmetric(a in prop::collection::vec(finite(), 1..10), seed in any::<u64>()) {
        let n = a.len();
        let x = Tensor::new(vec![1, n], a).unwrap();
        let y = RngStream::new(seed).normal_tensor(&[1, n]);
        prop_assert_eq!(reconstruction_loss(&x, &y).unwrap(), reconstruction_loss(&y, &x).unwrap());
        prop_assert_eq!(reconstruction_loss(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn adam_is_deterministic(seed in any::<u64>(), lr in 1e-5..1e-1f64) {
        let mut rng = RngStream::new(seed);
        let mut a = flowvae::nn::DenseLayer::new(3, 2, Activation::Linear, &mut rng);
        let mut b = a.clone();
        let mut g = flowvae::nn::GradStore::new();
        g.insert("weight", rng.normal_tensor(&[3, 2]));
        g.insert("bias", rng.normal_tensor(&[2]));
        let h = OptimHyper::with_lr(lr);
        let (mut sa, mut sb) = (AdamState::new(), AdamState::new());
        for _ in 0..3 {
            adam_step(&mut a, &g, &mut sa, &h).unwrap();
            adam_step(&mut b, &g, &mut sb, &h).unwrap();
        }
        prop_assert_eq!(a.checksum(), b.checksum());
    }

    #[test]
    fn l2_gradient_matches_difference(seed in any::<u64>(), lambda in 1e-6..1e-1f64) {
        let mut conv = Conv1DLayer::new(3, 2, 2, 1, Padding::Valid, Activation::Relu, &mut RngStream::new(seed)).unwrap();
        let (_, g) = l2_penalty(&conv, lambda);
        let grad = g.get("kernel").unwrap().clone();
        let h = 1e-6;
        for i in 0..grad.len() {
            let orig = conv.kernel.value.data()[i];
            conv.kernel.value.data_mut()[i] = orig + h;
            let up = l2_penalty(&conv, lambda).0;
            conv.kernel.value.data_mut()[i] = orig - h;
            let down = l2_penalty(&conv, lambda).0;
            conv.kernel.value.data_mut()[i] = orig;
            prop_assert!(((up - down) / (2.0 * h) - grad.data()[i]).abs() < 1e-8);
        }
        prop_assert_eq!(conv.kernel.kind, ParamKind::ConvKernel);
    }

    #[test]
    fn confusion_invariants(counts in prop::collection::vec(prop::collection::vec(0u64..50, 3), 3)) {
        let names: Vec<String> = ["Benign", "A", "B"].iter().map(|s| s.to_string()).collect();
        let cm = ConfusionMatrix::from_counts(counts, names).unwrap();
        prop_assert!(cm.trace() <= cm.total());
        if let Some(o) = per_class_accuracy(&cm).overall {
            prop_assert!((0.0..=1.0).contains(&o));
        }
        let b = binary_collapse(&cm, 0).unwrap();
        prop_assert_eq!(b.total(), cm.total());
        prop_assert_eq!(b.row_sum(0), cm.row_sum(0));
        let col0: u64 = (0..3).map(|i| cm.get(i, 0)).sum();
        prop_assert_eq!(b.get(0, 0) + b.get(1, 0), col0);
    }

    #[test]
    fn total_loss_with_zero_klm(p in 0.0..10.0f64, r in 0.0..10.0f64, kl in 0.0..10.0f64) {
        let mut pr = presets().into_iter().find(|p| p.name == "4").unwrap();
        pr.klm = Some(0.0);
        prop_assert_eq!(total_loss(p, r, kl, &pr), p + r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn log_round_trip(rows in prop::collection::vec(
        (any::<u8>(), 0u8..3, prop::option::of(finite()), prop::option::of(finite()), prop::option::of(finite()), prop::option::of(finite()), finite()),
        0..6,
    )) {
        let mut step = 0;
        let rows: Vec<TrainLogRow> = rows
            .into_iter()
            .map(|(d, s, a, p, k, r, t)| {
                step += d as usize;
                TrainLogRow {
                    step,
                    split: [Split::Train, Split::Val, Split::Test][s as usize],
                    accuracy: a,
                    p_loss: p,
                    kl_loss: k,
                    r_loss: r,
                    total_loss: t,
                }
            })
            .collect();
        let mut buf = Vec::new();
        write_log_to(&rows, &mut buf).unwrap();
        prop_assert_eq!(read_log_from(buf.as_slice()).unwrap(), rows);
    }
}

#[test]
fn every_preset_keeps_feature_width() {
    for p in presets() {
        let width = p.features.width();
        let vae = VaeModel::new(p.architecture(width, 2), &mut RngStream::new(1)).unwrap();
        let x = RngStream::new(2).normal_tensor(&[2, width]);
        let (mu, _) = vae.encode(&x).unwrap();
        assert_eq!(
            vae.decode(&mu).unwrap().shape(),
            &[2, width],
            "preset {}",
            p.name
        );
    }
}

#[test]
fn kl_zero_only_at_origin() {
    let z = Tensor::zeros(&[2, 3]);
    assert!(kl_loss(&z, &z).unwrap().abs() < 1e-12);
    let mu = Tensor::new(vec![1, 1], vec![1e-3]).unwrap();
    assert!(kl_loss(&mu, &Tensor::zeros(&[1, 1])).unwrap() > 0.0);
}
