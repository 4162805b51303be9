// Scratch exploration of solver dynamics at paper scale. Not part of the
// deliverable surface; run with `cargo run --release -p lartk --example explore`.

use std::time::Instant;

use lartk::filters::{FilterSpec, hann_sqrt_response};
use lartk::geometry::{ScanGeometry, SystemMatrix, default_detector_length};
use lartk::metrics::mode_gain_profile;
use lartk::phantom::{PhantomSpec, make_phantom};
use lartk::solver::{SolveProblem, SolverConfig, run};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("recon");
    match which {
        "spectrum" => spectrum(),
        "recon" => {
            let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(128);
            let iters: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(500);
            recon(n, iters);
        }
        "oracle" => oracle(),
        _ => eprintln!("unknown mode"),
    }
}

/// Tiny-instance agreement study: constrained PDHG vs an independent
/// projected-subgradient method on the exact-penalty form.
fn oracle() {
    use lartk::diffops::{Boundary, DiffField, grad_adjoint_x, grad_adjoint_z, grad_x, grad_z};
    use lartk::filters::apply_filter;
    use lartk::geometry::{ImageGrid, Sinogram};

    let geom = ScanGeometry {
        n_views: 5,
        n_detector_bins: 16,
        ..ScanGeometry::paper()
    };
    let spec = PhantomSpec { n_pixels: 8, n_calcifications: 1, ..PhantomSpec::default() };
    let ph = make_phantom(&spec).unwrap();
    let m = SystemMatrix::build(&geom, &ph.values).unwrap();
    let g = m.forward_project(&ph.values).unwrap();
    let argv: Vec<String> = std::env::args().collect();
    let ax: f64 = argv.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.07);
    let az: f64 = argv.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.04);
    let beta: f64 = argv.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.03);
    let cutoff: f64 = argv.get(5).and_then(|s| s.parse().ok()).unwrap_or(4.0);
    let lambda0: f64 = argv.get(6).and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let b_rule = Boundary::TrailingZero;

    // solver side: single channel, eps = 0, long run
    let mut cfg = SolverConfig {
        epsilon_hi: 0.0,
        epsilon_lo: 0.0,
        n_iter: 100_000,
        filter_hi: FilterSpec::hann_sqrt(cutoff, 16),
        ..SolverConfig::single(16, ax, beta)
    };
    cfg.alpha_z = az;
    let t0 = Instant::now();
    let mut engine = lartk::solver::Engine::new(
        &SolveProblem { matrix: &m, data: &g, truth: Some(&ph.values) },
        &cfg,
    )
    .unwrap();
    let mut last = None;
    for _ in 0..cfg.n_iter {
        last = Some(engine.step().unwrap());
    }
    let last = last.unwrap();
    let out_image = engine.state().f.clone();
    println!(
        "pdhg: obj {:.9}  resid_hi {:.3e}  rmse_vs_truth {:.4e}  |y_hi| {:.4}  |p_x| {:.3} |p_z| {:.3}  ({:?})",
        last.objective_value,
        last.residual_hi_norm,
        last.image_rmse,
        engine.state().y_hi.norm2(),
        engine.state().p_x.max_abs(),
        engine.state().p_z.max_abs(),
        t0.elapsed()
    );
    let out = lartk::solver::SolverOutput {
        image: out_image,
        records: vec![last],
        checkpoints: vec![],
        steps: engine.steps(),
    };

    // dense weighted operator M = R X and target b = R g
    let resp = cfg.filter_hi.response().unwrap();
    let n_px = 64usize;
    let n_ray = g.len();
    let mut mt: Vec<f64> = vec![0.0; n_ray * n_px]; // row-major rays x pixels
    for p in 0..n_px {
        let mut e = m.image_template();
        e.values[p] = 1.0;
        let col = apply_filter(&m.forward_project(&e).unwrap(), &resp).unwrap();
        for r in 0..n_ray {
            mt[r * n_px + p] = col.values[r];
        }
    }
    let b = apply_filter(&g, &resp).unwrap();

    let matvec = |f: &[f64]| -> Vec<f64> {
        (0..n_ray).map(|r| (0..n_px).map(|p| mt[r * n_px + p] * f[p]).sum()).collect()
    };
    let rmatvec = |y: &[f64]| -> Vec<f64> {
        (0..n_px).map(|p| (0..n_ray).map(|r| mt[r * n_px + p] * y[r]).sum()).collect()
    };
    let dtv = |f: &ImageGrid| {
        lartk::diffops::dtv_value(f, ax, az, beta, b_rule).unwrap()
    };

    let mut oracle_solutions: Vec<Vec<f64>> = Vec::new();
    for (lambda, t0s, decay, init) in [
        (lambda0, 0.5f64, 0.75f64, 0usize),
        (lambda0, 0.5, 0.75, 1),
        (lambda0, 1.0, 0.8, 2),
        (2.0 * lambda0, 0.5, 0.8, 0),
    ] {
        let t_start = Instant::now();
        let mut f = m.image_template();
        // different deterministic starting points to probe uniqueness
        for (p, v) in f.values.iter_mut().enumerate() {
            *v = match init {
                0 => 0.0,
                1 => 1.0,
                _ => ((p * 37 % 11) as f64) * 0.2,
            };
        }
        let mut best = f.clone();
        let mut best_phi = f64::INFINITY;
        let iters = 100_000usize;
        let stages = 25usize;
        let per_stage = iters / stages;
        for k in 0..iters {
            // subgradient of the exact-penalty objective
            let gx = grad_x(&f, b_rule).unwrap();
            let gz = grad_z(&f, b_rule).unwrap();
            let sgn = |v: &[f64]| -> Vec<f64> {
                v.iter().map(|x| if *x > 0.0 { 1.0 } else if *x < 0.0 { -1.0 } else { 0.0 }).collect()
            };
            let sx = grad_adjoint_x(
                &DiffField { values: sgn(&gx.values), ..gx.clone() }, b_rule).unwrap();
            let sz = grad_adjoint_z(
                &DiffField { values: sgn(&gz.values), ..gz.clone() }, b_rule).unwrap();
            let mut resid = matvec(&f.values);
            for (rv, bv) in resid.iter_mut().zip(&b.values) {
                *rv -= bv;
            }
            let rn = resid.iter().map(|x| x * x).sum::<f64>().sqrt();
            let pen = rmatvec(&resid);
            let mut sub = vec![0.0; n_px];
            for p in 0..n_px {
                sub[p] = ax * sx.values[p]
                    + az * sz.values[p]
                    + beta * if f.values[p] != 0.0 { f.values[p].signum() } else { 0.0 }
                    + if rn > 0.0 { lambda * pen[p] / rn } else { 0.0 };
            }
            let sub_norm = sub.iter().map(|x| x * x).sum::<f64>().sqrt();
            if sub_norm == 0.0 {
                break;
            }
            // normalized direction with geometrically restarted step length
            let step = t0s * decay.powi((k / per_stage) as i32) / sub_norm;
            for p in 0..n_px {
                f.values[p] = (f.values[p] - step * sub[p]).max(0.0);
            }
            let phi = dtv(&f) + lambda * {
                let r = matvec(&f.values);
                r.iter().zip(&b.values).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt()
            };
            if phi < best_phi {
                best_phi = phi;
                best = f.clone();
            }
        }
        let r = matvec(&best.values);
        let rn = r.iter().zip(&b.values).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
        let rms: f64 = (best
            .values
            .iter()
            .zip(&out.image.values)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            / n_px as f64)
            .sqrt();
        println!(
            "oracle lambda={lambda} t0={t0s} q={decay} init={init}: dtv {:.9}  resid {:.3e}  rms_vs_pdhg {:.4e}  rel_obj_diff {:.3e}  ({:?})",
            dtv(&best),
            rn,
            rms,
            (dtv(&best) - last.objective_value).abs() / last.objective_value.abs().max(1e-30),
            t_start.elapsed()
        );
        oracle_solutions.push(best.values.clone());
    }
    for i in 1..oracle_solutions.len() {
        let rms: f64 = (oracle_solutions[0]
            .iter()
            .zip(&oracle_solutions[i])
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            / n_px as f64)
            .sqrt();
        println!("oracle[0] vs oracle[{i}]: rms {rms:.4e}");
    }
}

fn spectrum() {
    let geom = ScanGeometry {
        n_detector_bins: 128,
        detector_length_cm: default_detector_length(10.0, 50.0, 100.0),
        ..ScanGeometry::paper()
    };
    let spec = PhantomSpec { n_pixels: 64, ..PhantomSpec::default() };
    let ph = make_phantom(&spec).unwrap();
    let m = SystemMatrix::build(&geom, &ph.values).unwrap();
    let modes: Vec<usize> = (0..32).collect();
    let id = FilterSpec::identity(128).response().unwrap();
    let h4 = hann_sqrt_response(128, 4.0).unwrap();
    let h8 = hann_sqrt_response(128, 8.0).unwrap();
    let un = mode_gain_profile(&m, &id, &modes).unwrap();
    let w4 = mode_gain_profile(&m, &h4, &modes).unwrap();
    let w8 = mode_gain_profile(&m, &h8, &modes).unwrap();
    println!("mode, unweighted, hann_c4, hann_c8, att4, att8");
    for k in 0..modes.len() {
        println!(
            "{:3} {:12.6} {:12.6} {:12.6}   {:8.5} {:8.5}",
            k,
            un.gains[k],
            w4.gains[k],
            w8.gains[k],
            w4.gains[k] / un.gains[k],
            w8.gains[k] / un.gains[k]
        );
    }
    let (low, mid) = (1usize, 16usize);
    println!(
        "ratio low/mid unweighted = {:.6}, weighted(c4) = {:.6}",
        un.gains[low] / un.gains[mid],
        w4.gains[low] / w4.gains[mid]
    );
}

fn recon(n: usize, iters: usize) {
    let (alpha, beta) = match n {
        512 => (1.7, 5.0),
        256 => (1.9, 10.0),
        _ => (1.95, 10.0),
    };
    let scope = match std::env::args().nth(4).as_deref() {
        Some("pd") => lartk::solver::RelaxationScope::PrimalAndDual,
        _ => lartk::solver::RelaxationScope::PrimalOnly,
    };
    let balance: f64 = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let geom = ScanGeometry::paper();
    let spec = PhantomSpec { n_pixels: n, ..PhantomSpec::default() };
    let ph = make_phantom(&spec).unwrap();
    let t0 = Instant::now();
    let m = SystemMatrix::build(&geom, &ph.values).unwrap();
    println!("matrix {}x{} nnz {} built in {:?}", m.n_rays(), m.n_pixels(), m.nnz(), t0.elapsed());
    println!(
        "phantom objective {:.2}, scope {scope:?}",
        lartk::diffops::dtv_value(&ph.values, alpha, alpha, beta, lartk::diffops::Boundary::TrailingZero)
            .unwrap()
    );
    let g = m.forward_project(&ph.values).unwrap();

    let two_lowpass = SolverConfig { n_iter: iters, ..SolverConfig::two_channel(1024, alpha, beta) };
    let mut two_comp = two_lowpass.clone();
    two_comp.filter_hi = FilterSpec {
        kind: lartk::filters::FilterKind::HannSqrtComplement,
        cutoff_param: 4.0,
        n_bins: 1024,
    };
    for (name, mut cfg) in [
        ("single", SolverConfig { n_iter: iters, ..SolverConfig::single(1024, alpha, beta) }),
        ("two-lp", two_lowpass),
        ("two-cp", two_comp),
    ] {
        cfg.relaxation_scope = scope;
        cfg.step_balance = balance;
        let t0 = Instant::now();
        let problem = SolveProblem { matrix: &m, data: &g, truth: Some(&ph.values) };
        match run(&problem, &cfg) {
            Ok(out) => {
                let s = out.steps;
                println!(
                    "{name} n={n}: tau={:.5} sig_hi={:.5} sig_lo={:.5} |RhiX|={:.3} |RloX|={:.3} t={:?}",
                    s.tau, s.sigma_hi, s.sigma_lo, s.norm_hi, s.norm_lo, t0.elapsed()
                );
                for k in [0, 9, 49, 99, 199, 299, 399, 499] {
                    if k < out.records.len() {
                        let r = &out.records[k];
                        println!(
                            "  it {:3}  rmse {:.6}  obj {:.2}  slack_hi {:+.3e}  max {:.3}",
                            r.iteration,
                            r.image_rmse,
                            r.objective_value,
                            r.slack_hi,
                            out.image.max_abs()
                        );
                    }
                }
                let last = out.records.last().unwrap();
                let osc = lartk::metrics::oscillation_index(&out.records, 50..=200).unwrap();
                println!("  final rmse {:.6}  oscillation(50..200) {:.3e}", last.image_rmse, osc);
            }
            Err(e) => println!("{name} n={n}: FAILED {e}"),
        }
    }
}
