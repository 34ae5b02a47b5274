//! Acceptance checks. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails. The training-based checks run the desk
//! configuration in `configs/desk_cart_pendulum.toml`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symhnn::datagen::{
    build_dataset, monte_carlo_phase_samples, sample_initials, sample_two_body_initials, Snapshot,
    SplitSizes,
};
use symhnn::diffnet::ScalarNet;
use symhnn::evaluation::generator_alignment;
use symhnn::geometry::{
    cotangent_lift, directional_derivative, exp_generator, lie_bracket, norm, AffineGenerator,
    PhasePoint, SymplecticMatrix,
};
use symhnn::integrators::{
    implicit_midpoint, midpoint_step, rk4_fixed, FnField, HamiltonianField, MidpointOptions,
};
use symhnn::pipeline::{generate, layout, run_pipeline, ExperimentConfig, PipelineOutput};
use symhnn::systems::{Hamiltonian, SystemSpec, TWO_BODY_K};
use symhnn::training::losses::{dynamics_loss_grad, symmetry_loss_grad};
use symhnn::training::{default_mc_domain, total_loss, train, Mode};

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale(a).max(scale(b)).max(1e-10)
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize, r: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-r..r)).collect()
}

fn random_point(rng: &mut ChaCha8Rng, n: usize) -> PhasePoint {
    PhasePoint::from_vec(random_vec(rng, 2 * n, 2.0)).unwrap()
}

fn random_generator(rng: &mut ChaCha8Rng, n: usize) -> AffineGenerator {
    AffineGenerator::from_params(n, &random_vec(rng, n * n + n, 1.0)).unwrap()
}

fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = x[i];
            x[i] = x0 + h;
            let up = f(&x);
            x[i] = x0 - h;
            let down = f(&x);
            x[i] = x0;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn differentiation() -> Check {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = [0.0f64; 3];
    for _ in 0..30 {
        let n = rng.random_range(1..=2);
        let depth = rng.random_range(1..=3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=8)).collect();
        let mut net = ScalarNet::random(n, &hidden, &mut rng).map_err(err)?;

        for _ in 0..4 {
            let z = random_point(&mut rng, n);
            let g = net.input_gradient(&z).map_err(err)?;
            let fd = central_diff(z.as_slice(), H, |x| {
                net.forward(&PhasePoint::from_vec(x.to_vec()).unwrap()).unwrap()
            });
            worst[0] = worst[0].max(rel_err(&g, &fd));
        }

        let snaps: Vec<Snapshot> = (0..9)
            .map(|_| Snapshot {
                t: 0.0,
                z: random_point(&mut rng, n),
                zdot: random_vec(&mut rng, 2 * n, 1.0),
            })
            .collect();
        let refs: Vec<&Snapshot> = snaps.iter().collect();
        let (_, grad) = dynamics_loss_grad(&net, &refs, true).map_err(err)?;
        let theta = net.mlp().params().to_vec();
        let fd = central_diff(&theta, H, |p| {
            net.mlp_mut().set_params(p).unwrap();
            dynamics_loss_grad(&net, &refs, false).unwrap().0
        });
        net.mlp_mut().set_params(&theta).map_err(err)?;
        worst[1] = worst[1].max(rel_err(&grad, &fd));

        let gens: Vec<AffineGenerator> = (0..2).map(|_| random_generator(&mut rng, n)).collect();
        let mc: Vec<PhasePoint> = (0..7).map(|_| random_point(&mut rng, n)).collect();
        let (alpha, beta) = ([0.7, 1.3], [0.4, 2.0]);
        let sg = symmetry_loss_grad(&net, &gens, &mc, &alpha, &beta, true).map_err(err)?;
        let fd = central_diff(&theta, H, |p| {
            net.mlp_mut().set_params(p).unwrap();
            symmetry_loss_grad(&net, &gens, &mc, &alpha, &beta, false).unwrap().loss
        });
        net.mlp_mut().set_params(&theta).map_err(err)?;
        worst[2] = worst[2].max(rel_err(&sg.net, &fd));
        for k in 0..gens.len() {
            let fd = central_diff(&gens[k].to_params(), H, |p| {
                let mut g = gens.clone();
                g[k] = AffineGenerator::from_params(n, p).unwrap();
                symmetry_loss_grad(&net, &g, &mc, &alpha, &beta, false).unwrap().loss
            });
            worst[2] = worst[2].max(rel_err(&sg.generators[k], &fd));
        }
    }
    let detail = format!(
        "max rel err: input grad {:.1e}, dynamics loss {:.1e}, symmetry loss {:.1e} (30 nets, limit 1e-4)",
        worst[0], worst[1], worst[2]
    );
    ensure(worst.iter().all(|&e| e < 1e-4), detail)
}

fn zero_at_truth() -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    for (spec, horizon, rate) in [
        (SystemSpec::cart_pendulum_default(), 3.0, 15.0),
        (SystemSpec::two_body_default(), 10.0, 1.0),
    ] {
        let sys = spec.build().map_err(err)?;
        let ds = build_dataset(&sys, &sample_initials(&spec, 30, 0), horizon, rate, 0.0, 0).map_err(err)?;
        let gens = sys
            .true_generators()
            .iter()
            .map(|v| v.normalized())
            .collect::<symhnn::Result<Vec<_>>>()
            .map_err(err)?;
        let domain = default_mc_domain(&spec, ds.train()).map_err(err)?;
        let mc = monte_carlo_phase_samples(&domain, 256, 0);
        let loss = total_loss(&sys, &gens, &ds.records, &mc, 0.5, &[], &[]).map_err(err)?;
        ok &= loss < 1e-10;
        parts.push(format!("{} {loss:.1e}", spec.name()));
    }
    ensure(ok, format!("total loss {} (limit 1e-10)", parts.join(", ")))
}

fn geometry() -> Check {
    const INSTANCES: usize = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = [0.0f64; 4];
    for _ in 0..INSTANCES {
        let n = rng.random_range(1..=3);
        let (a, b, c) = (
            random_generator(&mut rng, n),
            random_generator(&mut rng, n),
            random_generator(&mut rng, n),
        );
        let br = |x: &AffineGenerator, y: &AffineGenerator| lie_bracket(x, y).unwrap();
        let jacobi = &(&br(&br(&a, &b), &c) + &br(&br(&b, &c), &a)) + &br(&br(&c, &a), &b);
        worst[0] = worst[0].max(norm(&jacobi));
        worst[1] = worst[1].max(norm(&(&br(&a, &b) + &br(&b, &a))));

        let g = exp_generator(&a, rng.random_range(-1.0..1.0));
        let z = random_point(&mut rng, n);
        let dim = 2 * n;
        let mut d = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            let col = central_diff(z.as_slice(), 1e-6, |x| {
                cotangent_lift(&g, &PhasePoint::from_vec(x.to_vec()).unwrap()).unwrap().as_slice()[j]
            });
            for (i, v) in col.into_iter().enumerate() {
                d[(j, i)] = v;
            }
        }
        let j = SymplecticMatrix::new(n).to_matrix();
        let defect = (d.transpose() * &j * &d - &j).abs().max();
        worst[2] = worst[2].max(defect);

        let net = ScalarNet::random(n, &[6, 6], &mut rng).map_err(err)?;
        let grad = net.input_gradient(&z).map_err(err)?;
        let lie = directional_derivative(&a, &grad, &z).map_err(err)?;
        let along = central_diff(&[0.0], 1e-5, |t| {
            let moved = cotangent_lift(&exp_generator(&a, t[0]), &z).unwrap();
            net.forward(&moved).unwrap()
        })[0];
        worst[3] = worst[3].max((lie - along).abs() / lie.abs().max(1.0));
    }
    let detail = format!(
        "{INSTANCES} instances: Jacobi {:.1e}, antisymmetry {:.1e}, |D^T J D - J| {:.1e} (limit 1e-6), \
         exp vs directional derivative {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    );
    ensure(
        worst[0] < 1e-10 && worst[1] < 1e-12 && worst[2] < 1e-6 && worst[3] < 1e-6,
        detail,
    )
}

fn integrators() -> Check {
    let field = FnField::new(2, |z: &[f64]| vec![z[1], -z[0]]);
    let energy = |z: &PhasePoint| 0.5 * (z.q()[0].powi(2) + z.p()[0].powi(2));
    let z0 = PhasePoint::new(&[1.0], &[0.0]).map_err(err)?;

    let mid = implicit_midpoint(&field, &z0, 1000.0, 0.1).map_err(err)?;
    let e: Vec<f64> = mid.states.iter().map(energy).collect();
    let per_step = e.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    let tenth = e.len() / 10;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let drift = (mean(&e[e.len() - tenth..]) - mean(&e[..tenth])).abs();
    let max_dev = e.iter().map(|x| (x - e[0]).abs()).fold(0.0, f64::max);

    let rk = rk4_fixed(&field, &z0, 1000.0, 0.1).map_err(err)?;
    let er: Vec<f64> = rk.states.iter().map(energy).collect();
    let monotone = er.windows(2).all(|w| w[1] < w[0]);
    let rk_loss = er[0] - er[er.len() - 1];

    let sys = SystemSpec::cart_pendulum_default().build().map_err(err)?;
    let cart = HamiltonianField(&sys);
    let opts = MidpointOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut symmetry = 0.0f64;
    for _ in 0..100 {
        let z = random_vec(&mut rng, 2, 2.0);
        let fwd = midpoint_step(&field, &z, 0.1, 0, opts).map_err(err)?;
        let back = midpoint_step(&field, &fwd, -0.1, 0, opts).map_err(err)?;
        symmetry = symmetry.max(rel_err(&back, &z));
        let z = random_vec(&mut rng, 4, 2.0);
        let fwd = midpoint_step(&cart, &z, 1.0 / 15.0, 0, opts).map_err(err)?;
        let back = midpoint_step(&cart, &fwd, -1.0 / 15.0, 0, opts).map_err(err)?;
        symmetry = symmetry.max(rel_err(&back, &z));
    }
    let detail = format!(
        "midpoint per-step energy change {per_step:.1e} (limit 1e-12), drift over t=1000 {drift:.1e}, \
         max deviation {max_dev:.1e}; RK4 monotone decrease {monotone} (loss {rk_loss:.2e}); \
         forward/backward defect {symmetry:.1e}"
    );
    ensure(
        per_step < 1e-12 && drift < 1e-10 && max_dev < 1e-10 && monotone && rk_loss > 1e-6 && symmetry < 1e-10,
        detail,
    )
}

fn desk_config() -> std::result::Result<ExperimentConfig, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk_cart_pendulum.toml");
    ExperimentConfig::load(&path).map_err(err)
}

fn with_seed(mut cfg: ExperimentConfig, seed: u64) -> ExperimentConfig {
    cfg.seed = seed;
    cfg.dataset.seed = seed;
    for m in &mut cfg.models {
        m.config.seed = seed;
    }
    cfg
}

struct DeskRuns {
    first: PipelineOutput,
    dirs: [PathBuf; 2],
    _tmp: tempfile::TempDir,
}

fn desk_runs() -> std::result::Result<DeskRuns, String> {
    let cfg = desk_config()?;
    let tmp = tempfile::tempdir().map_err(err)?;
    let dirs = [tmp.path().join("run-a"), tmp.path().join("run-b")];
    let first = run_pipeline(&cfg, &dirs[0]).map_err(err)?;
    run_pipeline(&cfg, &dirs[1]).map_err(err)?;
    Ok(DeskRuns { first, dirs, _tmp: tmp })
}

fn symmetry_recovery(runs: &DeskRuns) -> Check {
    let truth = AffineGenerator::translation(&[1.0, 0.0]);
    let learned = |generators: &[AffineGenerator]| -> std::result::Result<f64, String> {
        let v = generators.first().ok_or("no learned generator")?;
        generator_alignment(v, &truth).map_err(err)
    };
    let seed0 = runs
        .first
        .models
        .iter()
        .find(|m| m.mode == Mode::SymHNN)
        .ok_or("desk run has no symhnn model")?;
    let mut alignments = vec![learned(&seed0.generators)?];
    for seed in [1, 2] {
        let cfg = with_seed(desk_config()?, seed);
        let ds = generate(&cfg).map_err(err)?;
        let tc = cfg.model(Mode::SymHNN).ok_or("config has no symhnn model")?;
        let model = train(&ds, tc, Mode::SymHNN, None).map_err(err)?;
        alignments.push(learned(&model.generators)?);
    }
    let hits = alignments.iter().filter(|&&a| a > 0.95).count();
    let shown: Vec<String> = alignments.iter().map(|a| format!("{a:.5}")).collect();
    ensure(
        hits >= 2,
        format!("alignment per seed [{}], {hits}/3 above 0.95", shown.join(", ")),
    )
}

fn symmetry_error_gain(runs: &DeskRuns) -> Check {
    let aggregate = |mode: &str| {
        runs.first
            .report
            .symmetry
            .iter()
            .find(|s| s.model == mode && s.generator == "true-0")
            .map(|s| s.aggregate)
            .ok_or(format!("no symmetry summary for {mode}"))
    };
    let (hnn, sym) = (aggregate("hnn")?, aggregate("symhnn")?);
    let ratio = hnn / sym;
    ensure(
        ratio >= 10.0,
        format!("aggregate error with true generator: hnn {hnn:.3e}, symhnn {sym:.3e}, ratio {ratio:.1} (need >= 10)"),
    )
}

fn conserved_quantity(runs: &DeskRuns) -> Check {
    let spread = |mode: &str| {
        let r = runs
            .first
            .report
            .rollouts
            .iter()
            .find(|r| r.model == mode)
            .ok_or(format!("no rollout for {mode}"))?;
        if let Some(e) = &r.error {
            return Err(format!("{mode} rollout failed: {e}"));
        }
        r.conserved_peak_to_peak
            .first()
            .copied()
            .ok_or(format!("no conserved trace for {mode}"))
    };
    let (base, sym) = (spread("basenn")?, spread("symhnn")?);
    let ratio = base / sym;
    ensure(
        ratio >= 5.0,
        format!("peak-to-peak of p_s over 60 s: basenn {base:.3e}, symhnn {sym:.3e}, ratio {ratio:.1} (need >= 5)"),
    )
}

fn dataset_statistics() -> Check {
    let spec = SystemSpec::cart_pendulum_default();
    let sys = spec.build().map_err(err)?;
    let ds = build_dataset(&sys, &sample_initials(&spec, 250, 4), 3.0, 15.0, 1e-2, 4).map_err(err)?;
    let mut sq = 0.0;
    let mut count = 0usize;
    for r in &ds.records {
        let truth = sys.vector_field(&r.z).map_err(err)?;
        for (a, b) in r.zdot.iter().zip(&truth) {
            sq += (a - b).powi(2);
            count += 1;
        }
    }
    let var = sq / count as f64;
    let noise_ok = (var / 1e-2 - 1.0).abs() < 0.05;

    let sizes = SplitSizes::for_total(ds.records.len());
    let mut split_ok = ds.train().len() == sizes.train
        && ds.validation().len() == sizes.validation
        && ds.test().len() == sizes.test;
    for total in 1..=2000 {
        let s = SplitSizes::for_total(total);
        let t = total as f64;
        split_ok &= s.total() == total
            && (s.train as f64 - 0.70 * t).abs() <= 0.5
            && (s.validation as f64 - 0.15 * t).abs() <= 0.5
            && (s.test as f64 - 0.15 * t).abs() <= 1.0;
    }

    let initials = sample_two_body_initials(10_000, TWO_BODY_K, 5);
    let mut orth = 0.0f64;
    let mut bounds_ok = true;
    let mut orientations = [0usize; 2];
    for z in &initials {
        let (q, p) = (z.q(), z.p());
        let r = q[0].hypot(q[1]);
        let speed = p[0].hypot(p[1]);
        let dot = q[0] * p[0] + q[1] * p[1];
        orth = orth.max(dot.abs() / (r * speed));
        let u = speed / (TWO_BODY_K / r).sqrt();
        bounds_ok &= (5.0..=10.0).contains(&r) && (0.7 - 1e-12..=1.3 + 1e-12).contains(&u);
        orientations[usize::from(q[0] * p[1] - q[1] * p[0] > 0.0)] += 1;
    }
    let two_body_ok = bounds_ok && orth < 1e-14 && orientations.iter().all(|&c| c > 4000);
    let detail = format!(
        "noise variance {var:.5e} over {count} components; splits {}/{}/{} of {}; \
         two-body: max |cos(q,p)| {orth:.1e}, bounds ok {bounds_ok}, orientations {orientations:?}",
        ds.train().len(),
        ds.validation().len(),
        ds.test().len(),
        ds.records.len()
    );
    ensure(noise_ok && split_ok && two_body_ok && ds.records.len() >= 10_000, detail)
}

fn determinism(runs: &DeskRuns) -> Check {
    let mut identical = Vec::new();
    for m in &runs.first.models {
        let rel = layout::history(m.mode);
        let a = std::fs::read(runs.dirs[0].join(&rel)).map_err(err)?;
        let b = std::fs::read(runs.dirs[1].join(&rel)).map_err(err)?;
        if a != b {
            return Err(format!("{rel} differs between reruns"));
        }
        identical.push(format!("{rel} ({} bytes)", a.len()));
    }
    let manifests = [0, 1].map(|i| std::fs::read(runs.dirs[i].join(layout::MANIFEST)).unwrap_or_default());
    Ok(format!(
        "identical: {}; full manifest identical: {}",
        identical.join(", "),
        manifests[0] == manifests[1]
    ))
}

fn report(index: usize, name: &str, start: Instant, check: Check) -> bool {
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail, ok) = match check {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("{tag} [{index}] {name} ({secs:.1} s): {detail}");
    ok
}

fn main() -> ExitCode {
    let mut ok = true;
    let quick: [(&str, fn() -> Check); 4] = [
        ("differentiation", differentiation),
        ("zero at truth", zero_at_truth),
        ("geometry", geometry),
        ("integrators", integrators),
    ];
    for (i, (name, f)) in quick.into_iter().enumerate() {
        let t = Instant::now();
        ok &= report(i + 1, name, t, f());
    }

    let t = Instant::now();
    let runs = desk_runs();
    let pipeline_secs = t.elapsed().as_secs_f64();
    println!("desk pipeline ran twice in {pipeline_secs:.1} s");
    let trained: [(usize, &str, fn(&DeskRuns) -> Check); 3] = [
        (5, "symmetry recovery", symmetry_recovery),
        (6, "symmetry error improvement", symmetry_error_gain),
        (7, "conserved quantity", conserved_quantity),
    ];
    for (i, name, f) in trained {
        let t = Instant::now();
        let check = runs.as_ref().map_err(Clone::clone).and_then(f);
        ok &= report(i, name, t, check);
    }

    let t = Instant::now();
    ok &= report(8, "dataset statistics", t, dataset_statistics());
    let t = Instant::now();
    let check = runs.as_ref().map_err(Clone::clone).and_then(determinism);
    ok &= report(9, "determinism", t, check);

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
