use ncl_autograd::{Graph, Tensor};
use ncl_core::encoder::{Encoder, EncoderConfig, Projector};
use ncl_core::momentum::{ema_update, warmup_fill, MomentumPair, NegativeQueue};
use ncl_core::neighborhood::SampleMeta;
use ncl_core::params::ParamSet;
use ncl_core::rng::{seeded, ChaCha8Rng};
use rand::Rng;

fn small_config() -> EncoderConfig {
    EncoderConfig {
        filters: 6,
        dilations: vec![1, 2],
        embed_dim: 5,
        ..EncoderConfig::default()
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn meta(uid: u64) -> SampleMeta {
    SampleMeta {
        stay: 0,
        t: 0,
        label: None,
        uid,
    }
}

#[test]
fn encoder_outputs_unit_rows_deterministically() {
    let enc = Encoder::new(EncoderConfig::default(), 7, 3, true).unwrap();
    let mut rng = seeded(1);
    let params = enc.init(&mut rng);
    let windows: Vec<Tensor> = (0..6).map(|_| random_tensor(&mut rng, &[48, 7])).collect();
    let statics: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.random_range(-1.0..1.0); 3]).collect();
    let w: Vec<&Tensor> = windows.iter().collect();
    let s: Vec<&[f64]> = statics.iter().map(Vec::as_slice).collect();
    let z = enc.encode(&params, &w, &s, 4).unwrap();
    for r in 0..6 {
        let norm: f64 = z.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-12);
    }
    let again = enc.encode(&params, &w, &s, 2).unwrap();
    assert!(z.data().iter().zip(again.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn receptive_field_bounds_dependence() {
    let cfg = small_config();
    let rf = cfg.receptive_field();
    assert_eq!(rf, 1 + 2 * (1 + 2));
    assert_eq!(EncoderConfig::default().receptive_field(), 63);

    let t_h = 20;
    let enc = Encoder::new(cfg, 3, 0, true).unwrap();
    let mut rng = seeded(2);
    let params = enc.init(&mut rng);
    let x = random_tensor(&mut rng, &[t_h, 3]);
    let z = |w: &Tensor| enc.encode(&params, &[w], &[&[]], 1).unwrap();
    let base = z(&x);

    let mut far = x.clone();
    for v in &mut far.data_mut()[..(t_h - rf) * 3] {
        *v += 5.0;
    }
    assert_eq!(z(&far), base);

    let mut near = x.clone();
    near.data_mut()[(t_h - rf) * 3] += 5.0;
    assert_ne!(z(&near), base);
}

#[test]
fn identity_projector_passes_relu_through() {
    let d = 4;
    let proj = Projector::from_config(&EncoderConfig {
        embed_dim: d,
        ..EncoderConfig::default()
    });
    let eye = Tensor::new(
        vec![d, d],
        (0..d * d).map(|i| if i / d == i % d { 1.0 } else { 0.0 }).collect(),
    )
    .unwrap();
    let mut params = ParamSet::new();
    params.push("w0", eye.clone());
    params.push("b0", Tensor::zeros(&[d]));
    params.push("w1", eye);
    params.push("b1", Tensor::zeros(&[d]));

    let z = Tensor::new(vec![2, d], vec![0.5, -1.0, 2.0, 0.0, -0.3, 0.4, 0.0, 1.2]).unwrap();
    let mut g = Graph::new();
    let ids = params.bind(&mut g, false);
    let zn = g.constant(z.clone());
    let p = proj.forward(&mut g, &ids, zn).unwrap();
    for r in 0..2 {
        let relu: Vec<f64> = z.row(r).iter().map(|v| v.max(0.0)).collect();
        let norm = relu.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (got, want) in g.value(p).row(r).iter().zip(&relu) {
            assert!((got - want / norm).abs() <= 1e-12);
        }
    }
}

#[test]
fn ema_examples_and_closed_form() {
    let one = |v: f64| {
        let mut p = ParamSet::new();
        p.push("w", Tensor::new(vec![2], vec![v, -v]).unwrap());
        p
    };
    let mut m = one(0.0);
    ema_update(&mut m, &one(1.0), 0.99).unwrap();
    assert!((m.get(0).data()[0] - 0.01).abs() <= 1e-15);

    let mut fixed = one(0.7);
    ema_update(&mut fixed, &one(0.7), 0.9).unwrap();
    assert_eq!(fixed, one(0.7));

    let (w, m0, rho) = (0.3, -2.0, 0.95);
    let mut pair = MomentumPair::new(one(w), rho).unwrap();
    pair.momentum = one(m0);
    let mut gap = f64::INFINITY;
    for n in 1..=200 {
        pair.update().unwrap();
        let got = pair.momentum.get(0).data()[0];
        assert!((got - (w + rho.powi(n) * (m0 - w))).abs() <= 1e-12);
        let d = (got - w).abs();
        assert!(d < gap);
        gap = d;
    }
}

#[test]
fn queue_fifo_examples() {
    let rows = |start: u64| Tensor::new(vec![4, 1], (0..4).map(|i| (start + i) as f64).collect()).unwrap();
    let metas = |start: u64| (start..start + 4).map(meta).collect::<Vec<_>>();
    let mut q = NegativeQueue::new(8, 1).unwrap();
    q.enqueue(&rows(0), &metas(0)).unwrap();
    q.enqueue(&rows(4), &metas(4)).unwrap();
    let uids: Vec<u64> = q.metas().iter().map(|m| m.uid).collect();
    assert_eq!(uids, vec![4, 5, 6, 7, 0, 1, 2, 3]);
    q.enqueue(&rows(8), &metas(8)).unwrap();
    let uids: Vec<u64> = q.metas().iter().map(|m| m.uid).collect();
    assert_eq!(uids, vec![8, 9, 10, 11, 4, 5, 6, 7]);
    assert_eq!(q.row(0), &[8.0]);
}

#[test]
fn warmup_fills_unit_rows_deterministically() {
    let fill = |seed: u64| {
        let mut rng = seeded(seed);
        let mut q = NegativeQueue::new(50, 3).unwrap();
        let mut uid = 0;
        warmup_fill(&mut q, 16, |n| {
            let mut data = Vec::new();
            for _ in 0..n {
                let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                data.extend(v.iter().map(|x| x / norm));
            }
            let metas = (0..n).map(|_| {
                uid += 1;
                meta(uid)
            });
            Ok((Tensor::new(vec![n, 3], data)?, metas.collect()))
        })
        .unwrap();
        q
    };
    let q = fill(5);
    assert_eq!(q.len(), 50);
    for k in 0..50 {
        let norm: f64 = q.row(k).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-12);
    }
    assert_eq!(q.to_tensor(), fill(5).to_tensor());
}
