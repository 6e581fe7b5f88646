use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wassalign::autodiff::{check_parameter_gradients, finite_difference_check, GradCheckReport, Tape};
use wassalign::losses::{
    class_conditional_swd, cross_entropy, sample_projections, supcon_loss, swd_distance, transfer_objective,
    SupConConfig, TransferBatch, TransferWeights,
};
use wassalign::nn::{EncoderConfig, Mode, NormKind, YNetwork};
use wassalign::{DType, Tensor};

const POINTS: u64 = 20;
const STEP: f64 = 1e-6;
const TOL: f64 = 1e-4;
// Through the network, ReLU and sort kinks sit densely enough that a
// 1e-6 stencil can straddle one; a narrower step keeps the stencil on one side.
const NETWORK_STEP: f64 = 1e-7;

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape, data, DType::F64).unwrap()
}

fn assert_passed(what: &str, point: u64, r: &GradCheckReport) {
    assert!(r.passed, "{what} at point {point}: max relative error {:e}", r.max_relative_error);
}

#[test]
fn swd_gradient() {
    for p in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(p);
        let (m, d) = (rng.random_range(2..7), rng.random_range(1..5));
        let target = normal(&mut rng, &[m, d]);
        let at = normal(&mut rng, &[m, d]);
        let proj = sample_projections(5, d, p).unwrap();
        let r = finite_difference_check(
            |t, x| {
                let y = t.constant(target.clone());
                swd_distance(t, x, y, &proj)
            },
            &at,
            STEP,
            TOL,
        )
        .unwrap();
        assert_passed("swd", p, &r);
    }
}

#[test]
fn class_conditional_swd_gradient() {
    for p in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + p);
        let (ms, mt, d) = (rng.random_range(4..9), rng.random_range(4..9), 3);
        let src_labels: Vec<usize> = (0..ms).map(|i| i % 2).collect();
        let tgt_labels: Vec<usize> = (0..mt).map(|i| (i + 1) % 3).collect();
        let target = normal(&mut rng, &[mt, d]);
        let at = normal(&mut rng, &[ms, d]);
        let proj = sample_projections(4, d, p).unwrap();
        let r = finite_difference_check(
            |t, x| {
                let y = t.constant(target.clone());
                let mut pairing = ChaCha8Rng::seed_from_u64(p);
                class_conditional_swd(t, x, &src_labels, y, &tgt_labels, &proj, 3, &mut pairing)
            },
            &at,
            STEP,
            TOL,
        )
        .unwrap();
        assert_passed("class-conditional swd", p, &r);
    }
}

#[test]
fn cross_entropy_gradient() {
    for p in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + p);
        let (n, k) = (rng.random_range(1..8), rng.random_range(2..6));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let at = normal(&mut rng, &[n, k]);
        let r = finite_difference_check(|t, x| cross_entropy(t, x, &labels), &at, STEP, TOL).unwrap();
        assert_passed("cross entropy", p, &r);
    }
}

#[test]
fn supcon_gradient() {
    let cfg = SupConConfig {
        temperature: 0.5,
        normalize: true,
    };
    for p in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + p);
        let (b, d) = (rng.random_range(2..6), rng.random_range(2..5));
        let base: Vec<usize> = (0..b).map(|_| rng.random_range(0..3)).collect();
        let labels: Vec<usize> = base.iter().chain(&base).copied().collect();
        let at = normal(&mut rng, &[2 * b, d]);
        let r = finite_difference_check(|t, x| supcon_loss(t, x, &labels, &cfg), &at, STEP, TOL).unwrap();
        assert_passed("supcon", p, &r);
    }
}

#[test]
fn transfer_objective_gradient() {
    let mut enc = EncoderConfig::desk_scale(1, 12, NormKind::Instance);
    enc.embed_dim = 6;
    let weights = TransferWeights {
        alpha: 0.7,
        cond_weight: 0.3,
        normalize_target_ce: false,
    };
    for p in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + p);
        let mut net = YNetwork::init(enc.clone(), 3, DType::F64, p, false).unwrap();
        let sx = normal(&mut rng, &[4, 1, 12, 12]);
        let tx = normal(&mut rng, &[2, 1, 12, 12]);
        let ux = normal(&mut rng, &[4, 1, 12, 12]);
        let sy = vec![0, 1, 2, 0];
        let ty = vec![1, 2];
        let pseudo = vec![Some(0), None, Some(1), Some(0)];
        let proj = sample_projections(3, enc.embed_dim, p).unwrap();
        let batch = TransferBatch {
            source_x: &sx,
            source_y: &sy,
            target_x: &tx,
            target_y: &ty,
            unlabeled_x: Some(&ux),
            pseudo_labels: &pseudo,
        };
        let r = check_parameter_gradients(
            &mut net,
            |net, tape: &mut Tape| {
                let mut pairing = ChaCha8Rng::seed_from_u64(p);
                let loss = transfer_objective(tape, net, &batch, &proj, &weights, Mode::Train, &mut pairing)?;
                assert!(loss.terms.swd.is_some() && loss.terms.cond_swd.is_some());
                Ok(loss.total)
            },
            NETWORK_STEP,
            TOL,
            2,
        )
        .unwrap();
        assert_passed("transfer objective", p, &r);
    }
}
