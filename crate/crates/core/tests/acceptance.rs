//! End-to-end acceptance criteria. Each test prints one PASS/FAIL line.
//!
//! MNIST is read from `$MNIST_DIR` (default `/root/data/mnist`).

use std::io::Write;
use std::path::PathBuf;
use std::process::Command;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use pulse_e2e::analysis::{decoherence_sweep, pipeline_lda, train_for_tau};
use pulse_e2e::data::{cap_per_class, filter_classes, load_split, Sample, Split};
use pulse_e2e::dynamics::{
    evolve_lindblad, evolve_pure, DensityMatrix, EvolutionConfig, Hamiltonian, Integrator, QuantumState,
};
use pulse_e2e::hilbert::{build_control_hamiltonians, build_static_hamiltonian, DeviceModel};
use pulse_e2e::model::{encode_controls, init_model, EndToEndModel, ModelConfig};
use pulse_e2e::pulses::{amplitude_for_rotation, schedule_to_waveforms, PulseSchedule, PulseShape};
use pulse_e2e::readout::{apply_confusion, bayesian_correct, confusion_1q, confusion_2q, OutcomeDistribution};
use pulse_e2e::training::{adam_train, evaluate, loss_and_gradients, smooth, EvalOptions, TrainOutcome, TrainerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, pass: bool, detail: &str) {
    // bypass the test harness capture so the verdict is always visible
    let line = format!("[criterion {criterion}] {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR").map_or_else(|| PathBuf::from("/root/data/mnist"), PathBuf::from)
}

struct Task {
    train: Vec<Sample>,
    test: Vec<Sample>,
}

fn load_task(labels: &[u8]) -> Task {
    let dir = mnist_dir();
    let train = load_split(&dir, Split::Train).unwrap_or_else(|e| panic!("MNIST train split in {}: {e}", dir.display()));
    let test = load_split(&dir, Split::Test).unwrap_or_else(|e| panic!("MNIST test split in {}: {e}", dir.display()));
    Task {
        train: filter_classes(&train, labels).unwrap(),
        test: filter_classes(&test, labels).unwrap(),
    }
}

fn two_digit() -> &'static Task {
    static T: OnceLock<Task> = OnceLock::new();
    T.get_or_init(|| load_task(&[0, 2]))
}

fn four_digit() -> &'static Task {
    static T: OnceLock<Task> = OnceLock::new();
    T.get_or_init(|| load_task(&[0, 2, 7, 9]))
}

fn train(labels: &[u8], iterations: usize, seed: u64, data: &[Sample]) -> TrainOutcome {
    let model = init_model(&ModelConfig::for_task(labels.to_vec())).unwrap();
    let cfg = TrainerConfig {
        iterations,
        seed,
        ..TrainerConfig::default()
    };
    adam_train(&model, data, &cfg).unwrap()
}

/// Default two-digit run, seed 0, 300 iterations; shared by several criteria.
fn reference_run() -> &'static TrainOutcome {
    static R: OnceLock<TrainOutcome> = OnceLock::new();
    R.get_or_init(|| train(&[0, 2], 300, 0, &two_digit().train))
}

fn count_per_class(samples: &[Sample], classes: usize) -> Vec<usize> {
    let mut c = vec![0; classes];
    samples.iter().for_each(|s| c[s.y] += 1);
    c
}

#[test]
fn criterion_1_two_digit_accuracy() {
    let task = two_digit();
    let per_class = count_per_class(&task.test, 2);
    assert!(per_class.iter().all(|&n| n >= 500), "test split too small: {per_class:?}");
    let mut acc = Vec::new();
    for seed in 0..3u64 {
        let model = if seed == 0 {
            reference_run().model.clone()
        } else {
            train(&[0, 2], 300, seed, &task.train).model
        };
        acc.push(evaluate(&model, &task.test, &EvalOptions::default()).unwrap().accuracy);
    }
    let floor = acc.iter().cloned().fold(f64::INFINITY, f64::min);
    let pass = acc[0] >= 0.95 && floor >= 0.90;
    report(
        1,
        pass,
        &format!(
            "accuracy seed0 {:.4} (>= 0.95), seeds {:?} min {floor:.4} (>= 0.90), {} test samples",
            acc[0],
            acc.iter().map(|a| (a * 1e4).round() / 1e4).collect::<Vec<_>>(),
            task.test.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_loss_convergence() {
    let losses = reference_run().losses();
    let smoothed = smooth(&losses, 4);
    let tail = &smoothed[smoothed.len() - 50..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let pass = mean <= 0.20;
    report(2, pass, &format!("mean smoothed loss over last 50 iterations {mean:.4} (<= 0.20)"));
    assert!(pass);
}

#[test]
fn criterion_3_four_digit_accuracy() {
    let task = four_digit();
    let run = train(&[0, 2, 7, 9], 500, 0, &task.train);
    let ev = evaluate(&run.model, &task.test, &EvalOptions::default()).unwrap();
    let pass = ev.accuracy >= 0.80;
    report(
        3,
        pass,
        &format!("accuracy {:.4} (>= 0.80) on {} test samples", ev.accuracy, ev.total),
    );
    assert!(pass);
}

/// Models trained at 0.08, 0.16 and 0.32 us total pulse length.
fn tau_models() -> &'static Vec<EndToEndModel> {
    static M: OnceLock<Vec<EndToEndModel>> = OnceLock::new();
    M.get_or_init(|| {
        let cfg = ModelConfig::for_task(vec![0, 2]);
        let trainer = TrainerConfig::default();
        [0.08e-6, 0.16e-6, 0.32e-6]
            .iter()
            .map(|&tau| {
                if (tau - 0.16e-6f64).abs() < 1e-12 {
                    // the default shape already spans 0.16 us
                    reference_run().model.clone()
                } else {
                    train_for_tau(&cfg, tau, &two_digit().train, &trainer).unwrap()
                }
            })
            .collect()
    })
}

#[test]
fn criterion_4_decoherence_collapse() {
    let taus = [0.08e-6, 0.16e-6, 0.32e-6];
    let test = cap_per_class(&two_digit().test, 2, 100);
    assert_eq!(test.len(), 200);
    let inf = f64::INFINITY;
    let grid = decoherence_sweep(tau_models(), &[0.0391e-6, inf], &[inf, 0.0020e-6], &taus, &test).unwrap();
    let mut pass = true;
    let mut cells = Vec::new();
    for (row, name) in grid.accuracy.iter().zip(["T1=0.0391us", "Tphi=0.0020us"]) {
        for (a, tau) in row.iter().zip(taus) {
            pass &= (a - 0.5).abs() <= 0.02;
            cells.push(format!("{name}@{:.2}us={a:.3}", tau * 1e6));
        }
    }
    report(4, pass, &format!("accuracy 0.500 +- 0.02 expected: {}", cells.join(" ")));
    assert!(pass);
}

#[test]
fn criterion_5_mild_decoherence() {
    let test = cap_per_class(&two_digit().test, 2, 200);
    assert_eq!(test.len(), 400);
    let model = &tau_models()[2];
    let grid = decoherence_sweep(std::slice::from_ref(model), &[20e-6], &[f64::INFINITY], &[0.32e-6], &test).unwrap();
    let a = grid.accuracy[0][0];
    let pass = (a - 0.989).abs() <= 0.03;
    report(5, pass, &format!("T1=20us tau=0.32us accuracy {a:.4} (0.989 +- 0.03)"));
    assert!(pass);
}

#[test]
fn criterion_6_lda_statistics() {
    let stages = pipeline_lda(&reference_run().model, &two_digit().test).unwrap();
    let s: Vec<f64> = stages.iter().map(|st| st.result.pooled_std).collect();
    let centred = stages
        .iter()
        .all(|st| (st.result.means[0] - 0.5).abs() <= 1e-9 && (st.result.means[1] + 0.5).abs() <= 1e-9);
    let pass = (s[0] - 0.1658).abs() <= 0.03 && s[1] > s[0] && s[0] > s[2] && s[2] <= 0.15 && centred;
    report(
        6,
        pass,
        &format!(
            "stds {:.4} {:.4} {:.4} {:.4}; need |s1-0.1658|<=0.03, s2>s1>s3, s3<=0.15",
            s[0], s[1], s[2], s[3]
        ),
    );
    assert!(pass);
}

fn hamiltonian(device: &DeviceModel) -> Hamiltonian {
    Hamiltonian::new(
        build_static_hamiltonian(device).unwrap(),
        build_control_hamiltonians(device).unwrap(),
    )
    .unwrap()
}

fn random_schedule(channels: usize, layers: usize, seed: u64, shape: &PulseShape) -> PulseSchedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = amplitude_for_rotation(1.0, shape);
    let data: Vec<f64> = (0..channels * layers).map(|_| rng.random_range(-2.0..2.0) * unit).collect();
    PulseSchedule::from_channel_major(channels, layers, &data).unwrap()
}

#[test]
fn criterion_7_numerical_oracles() {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let shape = PulseShape::default();

    // unitarity and trace over full four-layer schedules
    for dev in [DeviceModel::q3_q5(), DeviceModel::q3_q5_q6(), DeviceModel::q3_q5_q6().with_levels(3)] {
        let ham = hamiltonian(&dev);
        let wf = schedule_to_waveforms(&random_schedule(2 * dev.num_qubits, 4, 1, &shape), &shape).unwrap();
        let psi = evolve_pure(&QuantumState::ground(dev.dim()), &ham, &wf, &EvolutionConfig::closed()).unwrap();
        check("unitarity", (psi.norm() - 1.0).abs() <= 1e-9);
        let open = dev.clone().with_uniform_coherence(1e-6, 2e-6);
        let rho = evolve_lindblad(
            &DensityMatrix::from_pure(&QuantumState::ground(dev.dim())),
            &ham,
            &wf,
            &open,
            &EvolutionConfig::open(),
        )
        .unwrap();
        check("trace", (rho.trace() - Complex64::new(1.0, 0.0)).norm() <= 1e-9);
        check("hermiticity", rho.hermitian_defect() <= 1e-9);
    }

    // closed-form decay of one undriven qubit
    let one = DeviceModel::uncoupled(1, 2);
    let ham1 = hamiltonian(&one);
    let idle = |layers: usize| schedule_to_waveforms(&PulseSchedule::zeros(2, layers), &shape).unwrap();
    let (t1, tphi) = (0.3e-6, 0.5e-6);
    let (g1, g2) = (1.0 / t1, 1.0 / tphi);
    let excited = DensityMatrix::from_pure(&QuantumState::basis(2, 1));
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let plus = DensityMatrix::from_pure(&QuantumState::from_amplitudes(DVector::from_vec(vec![
        Complex64::new(r, 0.0),
        Complex64::new(r, 0.0),
    ])));
    for layers in [1, 3] {
        let wf = idle(layers);
        let t = wf.duration();
        let relax = evolve_lindblad(&excited, &ham1, &wf, &one.clone().with_uniform_coherence(t1, f64::INFINITY), &EvolutionConfig::open()).unwrap();
        check("T1 decay", (relax.matrix[(1, 1)].re - (-t / t1).exp()).abs() <= 1e-6);
        let deco = evolve_lindblad(&plus, &ham1, &wf, &one.clone().with_uniform_coherence(t1, tphi), &EvolutionConfig::open()).unwrap();
        check("coherence decay", (deco.matrix[(0, 1)].norm() - 0.5 * (-(g1 + g2) * t / 2.0).exp()).abs() <= 1e-6);
    }

    // pure versus density propagation without decoherence
    let dev = DeviceModel::q3_q5();
    let ham = hamiltonian(&dev);
    let wf = schedule_to_waveforms(&random_schedule(4, 4, 2, &shape), &shape).unwrap();
    let rk = EvolutionConfig {
        integrator: Integrator::Rk4,
        dt: 0.1e-9,
        open_system: false,
    };
    let psi = evolve_pure(&QuantumState::ground(4), &ham, &wf, &rk).unwrap();
    let lossless = dev.clone().with_uniform_coherence(f64::INFINITY, f64::INFINITY);
    let rho = evolve_lindblad(&DensityMatrix::from_pure(&QuantumState::ground(4)), &ham, &wf, &lossless, &EvolutionConfig::open()).unwrap();
    let pure_rho = DensityMatrix::from_pure(&psi);
    check("pure vs density", (&rho.matrix - &pure_rho.matrix).iter().all(|z| z.norm() <= 1e-8));

    // exponential stepping against RK4
    for seed in 0..3 {
        let wf = schedule_to_waveforms(&random_schedule(4, 4, 10 + seed, &shape), &shape).unwrap();
        let exact = EvolutionConfig {
            dt: 0.1e-9,
            ..EvolutionConfig::closed()
        };
        let a = evolve_pure(&QuantumState::ground(4), &ham, &wf, &exact).unwrap();
        let b = evolve_pure(&QuantumState::ground(4), &ham, &wf, &rk).unwrap();
        check("exp vs rk4", a.fidelity(&b) >= 1.0 - 1e-6);
    }

    // forward differences against a central-difference oracle
    let mut model = init_model(&ModelConfig::for_task(vec![0, 2])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    model.w.iter_mut().for_each(|w| *w = rng.random_range(-0.02..0.02));
    model.theta_in.iter_mut().for_each(|t| *t = rng.random_range(-1.5..1.5));
    let x: Vec<f64> = (0..784).map(|_| if rng.random::<f64>() < 0.2 { rng.random() } else { 0.0 }).collect();
    let delta = 1e-3;
    let rep = loss_and_gradients(&model, &[(&x, 1)], delta).unwrap();
    let engine = model.engine(false).unwrap();
    let en = encode_controls(&model.w, &x).unwrap();
    let p = |en: &[f64], th: &[f64]| engine.forward_controls(en, th, Some(1)).unwrap().confidence.unwrap();
    let h = delta / 10.0;
    for k in 0..model.theta_in.len() {
        let (mut up, mut dn) = (model.theta_in.clone(), model.theta_in.clone());
        up[k] += h;
        dn[k] -= h;
        let central = -(p(&en, &up) - p(&en, &dn)) / (2.0 * h);
        check("fd gradient (inference)", (rep.g_in[k] - central).abs() <= 0.05 * central.abs().max(1e-3));
    }
    let pivot = x.iter().position(|&v| v > 0.1).unwrap();
    for row in 0..en.len() {
        let (mut up, mut dn) = (en.clone(), en.clone());
        up[row] += h;
        dn[row] -= h;
        let central = -(p(&up, &model.theta_in) - p(&dn, &model.theta_in)) / (2.0 * h);
        let fd = rep.g_w[(row, pivot)] / x[pivot];
        check("fd gradient (encoding)", (fd - central).abs() <= 0.05 * central.abs().max(1e-3));
    }

    // Bayesian readout round trip with both measured matrices
    for m0 in [confusion_1q(), confusion_2q()] {
        let n = m0.nrows();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let p = OutcomeDistribution(raw.iter().map(|v| v / s).collect());
            let back = bayesian_correct(&apply_confusion(&p, &m0).unwrap(), &m0).unwrap();
            check("bayesian round trip", back.0.iter().zip(&p.0).all(|(a, b)| (a - b).abs() <= 1e-9));
        }
        let inv = m0.clone().try_inverse().unwrap();
        check("inverse", (inv * &m0 - DMatrix::identity(n, n)).amax() <= 1e-9);
    }

    let pass = failures.is_empty();
    report(7, pass, &if pass { "all oracle checks within tolerance".into() } else { format!("failed: {failures:?}") });
    assert!(pass);
}

fn cli_train(out: &std::path::Path, task: &str, iterations: usize) -> Vec<u8> {
    let run = Command::new(env!("CARGO_BIN_EXE_pulse-e2e"))
        .args(["train", "--task", task, "--seed", "0", "--iterations", &iterations.to_string()])
        .arg("--data")
        .arg(mnist_dir())
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    std::fs::read(out.join("metrics.csv")).unwrap()
}

#[test]
fn criterion_8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut same = Vec::new();
    for (task, iters) in [("0,2", 300), ("0,2,7,9", 500)] {
        let a = cli_train(&dir.path().join(format!("{task}-a")), task, iters);
        let b = cli_train(&dir.path().join(format!("{task}-b")), task, iters);
        same.push((task, a == b && !a.is_empty()));
    }
    let pass = same.iter().all(|(_, s)| *s);
    report(8, pass, &format!("bit-identical metrics.csv on rerun: {same:?}"));
    assert!(pass);
}
