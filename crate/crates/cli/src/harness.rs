//! Experiment orchestration behind the CLI subcommands.
//!
//! Every entry point takes an [`ExperimentConfig`], writes its artifacts
//! under `output_dir`, and returns the in-memory results so tests can
//! assert on them directly. Reconstruction inputs (phantom, sinogram) are
//! loaded from `output_dir` when already present, otherwise generated
//! in-run; a `compare` run always generates both methods' inputs once and
//! feeds the identical arrays to both solvers, recording the input hashes
//! in the report sidecar.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use lartk::error::{Error, Result};
use lartk::filters::{FilterSpec, hann_sqrt_response};
use lartk::geometry::{ImageGrid, ScanGeometry, Sinogram, SystemMatrix};
use lartk::io::{self, fmt_f64};
use lartk::metrics::{image_rmse, mode_gain_profile};
use lartk::phantom::{PhantomImage, RNG_NAME, downsample_block, make_phantom};
use lartk::solver::{IterationRecord, SolveProblem, SolverMode, SolverOutput, run_with};

use crate::config::ExperimentConfig;

/// Display windows: reconstructions cover the tissue weight range,
/// difference images are symmetric about zero.
pub const RECON_WINDOW: (f64, f64) = (0.0, 2.0);
pub const DIFF_WINDOW: (f64, f64) = (-0.75, 0.75);

pub fn mode_name(mode: SolverMode) -> &'static str {
    match mode {
        SolverMode::Single => "single",
        SolverMode::TwoChannel => "two_channel",
    }
}

fn ensure_output_dir(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(())
}

pub struct PhantomArtifacts {
    pub image: PhantomImage,
    pub image_path: PathBuf,
    pub labels_path: PathBuf,
}

/// Generates (or regenerates) the phantom for one resolution and writes
/// the image, the label map, and their sidecars.
pub fn run_phantom(cfg: &ExperimentConfig, resolution: usize) -> Result<PhantomArtifacts> {
    ensure_output_dir(cfg)?;
    let image = build_phantom(cfg, resolution)?;
    let echo = cfg.echo_table()?;
    let image_path = cfg.output_dir.join(format!("phantom_{resolution}.f32"));
    let labels_path = cfg.output_dir.join(format!("phantom_{resolution}_labels.u8"));
    io::write_image(&image_path, &image.values, "phantom", None, Some(echo.clone()))?;
    io::write_labels(
        &labels_path,
        &image.labels,
        image.values.n_rows,
        image.values.n_cols,
        Some(RNG_NAME.into()),
        Some(echo),
    )?;
    Ok(PhantomArtifacts { image, image_path, labels_path })
}

fn build_phantom(cfg: &ExperimentConfig, resolution: usize) -> Result<PhantomImage> {
    let base = cfg.resolutions.iter().copied().max().unwrap_or(resolution);
    if cfg.downsample_from_base && resolution != base {
        if base % resolution != 0 {
            return Err(Error::InvalidPhantom(format!(
                "cannot decimate base {base} to {resolution}"
            )));
        }
        let spec = cfg.phantom_spec(base);
        let full = make_phantom(&spec)?;
        downsample_block(&full, &spec, base / resolution)
    } else {
        make_phantom(&cfg.phantom_spec(resolution))
    }
}

pub struct ProjectArtifacts {
    pub phantom: PhantomImage,
    pub matrix: SystemMatrix,
    pub sinogram: Sinogram,
    pub sinogram_path: PathBuf,
}

/// Builds the system matrix for one resolution and writes the noiseless
/// sinogram of the phantom.
pub fn run_project(cfg: &ExperimentConfig, resolution: usize) -> Result<ProjectArtifacts> {
    let geom = cfg.scan_geometry();
    let phantom = run_phantom(cfg, resolution)?.image;
    let matrix = SystemMatrix::build(&geom, &phantom.values)?;
    let sinogram = matrix.forward_project(&phantom.values)?;
    let sinogram_path = cfg.output_dir.join(format!("sinogram_{resolution}.f32"));
    io::write_sinogram(
        &sinogram_path,
        &sinogram,
        Some(geom.sha256()),
        Some(cfg.echo_table()?),
    )?;
    Ok(ProjectArtifacts { phantom, matrix, sinogram, sinogram_path })
}

/// Inputs for one reconstruction, either loaded from a previous run's
/// files or generated in-run.
struct Prepared {
    phantom: PhantomImage,
    matrix: SystemMatrix,
    sinogram: Sinogram,
    phantom_sha256: String,
    sinogram_sha256: String,
}

fn prepare(cfg: &ExperimentConfig, resolution: usize, geom: &ScanGeometry) -> Result<Prepared> {
    ensure_output_dir(cfg)?;
    let phantom_path = cfg.output_dir.join(format!("phantom_{resolution}.f32"));
    let sino_path = cfg.output_dir.join(format!("sinogram_{resolution}.f32"));

    let phantom = if phantom_path.exists() {
        let (values, _) = io::read_image(&phantom_path)?;
        // label map is not needed downstream; keep the stored image as truth
        PhantomImage { labels: Vec::new(), values }
    } else {
        run_phantom(cfg, resolution)?.image
    };
    let matrix = SystemMatrix::build(geom, &phantom.values)?;
    let sinogram = if sino_path.exists() {
        let (s, sidecar) = io::read_sinogram(&sino_path)?;
        if sidecar.geometry_sha256.as_deref() != Some(geom.sha256().as_str()) {
            return Err(Error::InvalidConfig(format!(
                "sinogram {} was produced under a different geometry",
                sino_path.display()
            )));
        }
        s
    } else {
        let s = matrix.forward_project(&phantom.values)?;
        io::write_sinogram(&sino_path, &s, Some(geom.sha256()), Some(cfg.echo_table()?))?;
        s
    };
    let phantom_sha256 = io::read_sidecar(&phantom_path)?.content_sha256;
    let sinogram_sha256 = io::read_sidecar(&sino_path)?.content_sha256;
    Ok(Prepared { phantom, matrix, sinogram, phantom_sha256, sinogram_sha256 })
}

pub struct ReconArtifacts {
    pub output: SolverOutput,
    pub image_path: PathBuf,
    pub telemetry_path: PathBuf,
}

/// Runs one reconstruction, streaming telemetry rows to CSV as they are
/// produced (so an aborted run leaves its partial telemetry on disk).
pub fn run_reconstruct(
    cfg: &ExperimentConfig,
    resolution: usize,
    mode: SolverMode,
) -> Result<ReconArtifacts> {
    let geom = cfg.scan_geometry();
    let prepared = prepare(cfg, resolution, &geom)?;
    reconstruct_prepared(cfg, resolution, mode, &geom, &prepared)
}

fn reconstruct_prepared(
    cfg: &ExperimentConfig,
    resolution: usize,
    mode: SolverMode,
    geom: &ScanGeometry,
    prepared: &Prepared,
) -> Result<ReconArtifacts> {
    let solver_cfg = cfg.solver_config(resolution, mode)?;
    let name = mode_name(mode);
    let telemetry_path = cfg.output_dir.join(format!("telemetry_{name}_{resolution}.csv"));

    let mut telemetry = std::io::BufWriter::new(fs::File::create(&telemetry_path)?);
    writeln!(
        telemetry,
        "iteration,image_rmse,residual_hi_norm,residual_lo_norm,objective_value,slack_hi,slack_lo"
    )
    .map_err(Error::Io)?;

    let problem = SolveProblem {
        matrix: &prepared.matrix,
        data: &prepared.sinogram,
        truth: Some(&prepared.phantom.values),
    };
    let mut stream_err = None;
    let result = run_with(&problem, &solver_cfg, |r| {
        if stream_err.is_none() {
            if let Err(e) = writeln!(
                telemetry,
                "{},{},{},{},{},{},{}",
                r.iteration,
                fmt_f64(r.image_rmse),
                fmt_f64(r.residual_hi_norm),
                fmt_f64(r.residual_lo_norm),
                fmt_f64(r.objective_value),
                fmt_f64(r.slack_hi),
                fmt_f64(r.slack_lo)
            ) {
                stream_err = Some(e);
            }
        }
    });
    telemetry.flush().map_err(Error::Io)?;
    drop(telemetry);
    if let Some(e) = stream_err {
        return Err(Error::Io(e));
    }
    let output = result?;

    let echo = cfg.echo_table()?;
    let image_path = cfg.output_dir.join(format!("recon_{name}_{resolution}.f32"));
    let mut extra = echo.clone();
    extra.insert(
        "steps".into(),
        toml::Value::try_from(output.steps)
            .map_err(|e| Error::Sidecar(format!("serialize steps: {e}")))?,
    );
    extra.insert("mode".into(), toml::Value::String(name.into()));
    io::write_image(&image_path, &output.image, "reconstruction", Some(geom.sha256()), Some(extra))?;

    for (iteration, image) in &output.checkpoints {
        let path = cfg
            .output_dir
            .join(format!("checkpoint_{name}_{resolution}_iter{iteration:05}.f32"));
        io::write_image(&path, image, "checkpoint", Some(geom.sha256()), Some(echo.clone()))?;
    }
    crate::render::write_png(
        &cfg.output_dir.join(format!("recon_{name}_{resolution}.png")),
        &output.image,
        RECON_WINDOW,
    )?;
    Ok(ReconArtifacts { output, image_path, telemetry_path })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub resolution: usize,
    pub rmse_single: f64,
    pub rmse_two: f64,
    pub improvement_percent: f64,
}

pub struct ResolutionOutcome {
    pub resolution: usize,
    pub records_single: Vec<IterationRecord>,
    pub records_two: Vec<IterationRecord>,
    pub truth_max: f64,
    pub image_single: ImageGrid,
    pub image_two: ImageGrid,
}

pub struct CompareReport {
    pub rows: Vec<ReportRow>,
    pub outcomes: Vec<ResolutionOutcome>,
    pub report_path: PathBuf,
}

/// Paired study: runs both methods per resolution on bit-identical inputs
/// and emits the comparison report, per-iteration convergence series, and
/// rendered difference images.
pub fn run_compare(cfg: &ExperimentConfig) -> Result<CompareReport> {
    let geom = cfg.scan_geometry();
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    let mut provenance = toml::Table::new();

    for &resolution in &cfg.resolutions {
        let prepared = prepare(cfg, resolution, &geom)?;
        let single =
            reconstruct_prepared(cfg, resolution, SolverMode::Single, &geom, &prepared)?;
        let two =
            reconstruct_prepared(cfg, resolution, SolverMode::TwoChannel, &geom, &prepared)?;

        let truth = &prepared.phantom.values;
        let rmse_single = image_rmse(&single.output.image, truth)?;
        let rmse_two = image_rmse(&two.output.image, truth)?;
        let improvement_percent = 100.0 * (rmse_single - rmse_two) / rmse_single;
        rows.push(ReportRow { resolution, rmse_single, rmse_two, improvement_percent });

        // difference images (reconstruction minus truth), fixed window
        for (name, image) in
            [("single", &single.output.image), ("two_channel", &two.output.image)]
        {
            let mut diff = image.clone();
            for (d, t) in diff.values.iter_mut().zip(&truth.values) {
                *d -= t;
            }
            crate::render::write_png(
                &cfg.output_dir.join(format!("diff_{name}_{resolution}.png")),
                &diff,
                DIFF_WINDOW,
            )?;
        }
        crate::render::write_png(
            &cfg.output_dir.join(format!("truth_{resolution}.png")),
            truth,
            RECON_WINDOW,
        )?;

        // convergence series: linear and log-log columns
        let conv_rows: Vec<Vec<String>> = single
            .output
            .records
            .iter()
            .zip(&two.output.records)
            .map(|(s, t)| {
                vec![
                    s.iteration.to_string(),
                    fmt_f64(s.image_rmse),
                    fmt_f64(t.image_rmse),
                    fmt_f64((s.iteration as f64).log10()),
                    fmt_f64(s.image_rmse.log10()),
                    fmt_f64(t.image_rmse.log10()),
                ]
            })
            .collect();
        io::write_csv_with_sidecar(
            &cfg.output_dir.join(format!("convergence_{resolution}.csv")),
            &[
                "iteration",
                "rmse_single",
                "rmse_two",
                "log10_iteration",
                "log10_rmse_single",
                "log10_rmse_two",
            ],
            &conv_rows,
            Some(cfg.echo_table()?),
        )?;

        let ab = cfg.alpha_beta_for(resolution)?;
        let mut res_meta = toml::Table::new();
        res_meta.insert("phantom_sha256".into(), prepared.phantom_sha256.clone().into());
        res_meta.insert("sinogram_sha256".into(), prepared.sinogram_sha256.clone().into());
        res_meta.insert("alpha".into(), ab.alpha.into());
        res_meta.insert("beta".into(), ab.beta.into());
        provenance.insert(format!("resolution_{resolution}"), toml::Value::Table(res_meta));

        outcomes.push(ResolutionOutcome {
            resolution,
            records_single: single.output.records,
            records_two: two.output.records,
            truth_max: truth.max_abs(),
            image_single: single.output.image,
            image_two: two.output.image,
        });
    }

    let report_path = cfg.output_dir.join("report.csv");
    let report_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.resolution.to_string(),
                fmt_f64(r.rmse_single),
                fmt_f64(r.rmse_two),
                fmt_f64(r.improvement_percent),
            ]
        })
        .collect();
    let mut extra = cfg.echo_table()?;
    extra.insert("inputs".into(), toml::Value::Table(provenance));
    io::write_csv_with_sidecar(
        &report_path,
        &["resolution", "rmse_single", "rmse_two", "improvement_percent"],
        &report_rows,
        Some(extra),
    )?;
    Ok(CompareReport { rows, outcomes, report_path })
}

/// Mode-gain diagnostics: probes the scaled geometry with cosine modes
/// under no weighting and under the two square-root Hanning cutoffs, and
/// exports the shipped filter responses.
pub fn run_spectrum(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    ensure_output_dir(cfg)?;
    let sp = &cfg.spectrum;
    let geom = ScanGeometry {
        n_detector_bins: sp.n_detector_bins,
        detector_length_cm: cfg.scan_geometry().detector_length_cm,
        ..cfg.scan_geometry()
    };
    geom.validate()?;
    let n = sp.grid_n;
    let grid = ImageGrid::zeros(n, n, geom.fov_side_cm / n as f64, (0.0, 0.0));
    let matrix = SystemMatrix::build(&geom, &grid)?;
    let max_mode = sp.max_mode.unwrap_or(n / 2 - 1).min(n - 1);
    let modes: Vec<usize> = (0..=max_mode).collect();

    let echo = cfg.echo_table()?;
    let mut written = Vec::new();
    let responses = [
        ("identity", FilterSpec::identity(sp.n_detector_bins).response()?),
        ("hann_c4", hann_sqrt_response(sp.n_detector_bins, 4.0)?),
        ("hann_c8", hann_sqrt_response(sp.n_detector_bins, 8.0)?),
    ];
    for (name, response) in &responses {
        let profile = mode_gain_profile(&matrix, response, &modes)?;
        let path = cfg.output_dir.join(format!("modegain_{name}_{n}.csv"));
        let rows: Vec<Vec<String>> = profile
            .modes
            .iter()
            .zip(&profile.gains)
            .map(|(m, g)| vec![m.to_string(), fmt_f64(*g)])
            .collect();
        io::write_csv_with_sidecar(&path, &["mode", "gain"], &rows, Some(echo.clone()))?;
        written.push(path);
    }

    // shipped filter responses at the full detector width, for audit
    let n_bins = cfg.geometry.n_detector_bins;
    for (name, spec) in [
        ("single", cfg.solver.filter_single),
        ("hi", cfg.solver.filter_hi),
        ("lo", cfg.solver.filter_lo),
    ] {
        let path = cfg.output_dir.join(format!("filter_response_{name}.csv"));
        io::write_filter_response_csv(
            &path,
            &FilterSpec { kind: spec.kind, cutoff_param: spec.cutoff, n_bins }.response()?,
        )?;
        written.push(path);
    }
    Ok(written)
}

/// Convenience wrapper used by tests: compare two directories file by file.
pub fn dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut entries: Vec<_> = fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|e| e.path().is_file())
        .map(|e| e.path())
        .collect();
    entries.sort();
    let mut out = Vec::new();
    for path in entries {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.push((name, fs::read(&path)?));
    }
    Ok(out)
}
