//! Implementations of the four subcommands.

use std::path::{Path, PathBuf};

use etalon_core::estimate::characterize_device;
use etalon_core::io::{
    self, manifest_path, read_datacube, read_layout, read_results, results_to_csv, write_layout,
    write_results, write_truth, DatacubeWriter, NormalizationInfo, NormalizedBasis, ResultsFile,
    FORMAT_VERSION,
};
use etalon_core::model::{regime_max_reflectivity, WaveRegime};
use etalon_core::report::{fit_report, opd_step_report, parameter_maps};
use etalon_core::simulate::{
    add_frame_noise, generate_truth, noise_sigma, nyquist_check, DeviceLayout, Simulator,
};

use crate::config::{parse_pixels, PipelineFlags, RunConfig};
use crate::error::{data_error, CliError, CliResult};

fn out_dir(flag: Option<&Path>, config: &RunConfig) -> CliResult<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| config.out_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| CliError::config("no output directory; pass --out or set out_dir"))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::io(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

pub fn simulate(config_path: &Path, out: Option<&Path>, seed: Option<u64>) -> CliResult<()> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let out = out_dir(out, &config)?;
    let layout_cfg = config
        .layout
        .clone()
        .ok_or_else(|| CliError::config("config is missing the layout section"))?;
    let grid_spec = config
        .grid
        .clone()
        .ok_or_else(|| CliError::config("config is missing the grid section"))?;
    let truth_spec = config
        .truth
        .clone()
        .ok_or_else(|| CliError::config("config is missing the truth section"))?;

    let layout = DeviceLayout::build(layout_cfg.clone()).map_err(CliError::config)?;
    let grid = grid_spec.build()?;
    let truth = generate_truth(&layout, &truth_spec).map_err(CliError::config)?;
    config.noise.validate().map_err(CliError::config)?;

    let nyquist = nyquist_check(&layout, &grid);
    if !nyquist.pass {
        eprintln!(
            "warning: Nyquist condition violated (margin {:.3}); the largest OPD aliases",
            nyquist.margin
        );
    }

    let simulator = Simulator::new(layout, grid.clone(), truth.clone(), config.regime,
        &config.incident_power)
        .map_err(CliError::config)?;

    // Frames are generated twice when noise needs the cube mean, so even
    // full-size planes never sit in memory.
    let sigma = match config.noise {
        etalon_core::simulate::NoiseModel::None => 0.0,
        _ => noise_sigma(&config.noise, simulator.noiseless_mean()),
    };
    let mut writer = DatacubeWriter::create(
        &out,
        &grid,
        simulator.layout().focal_height(),
        simulator.layout().focal_width(),
        simulator.incident_power().to_vec(),
    )
    .map_err(data_error)?;
    for i in 0..simulator.n_frames() {
        let mut frame = simulator.noiseless_frame(i);
        add_frame_noise(&mut frame, sigma, config.seed, i);
        writer.append_frame(&frame).map_err(data_error)?;
    }
    writer.finish().map_err(data_error)?;

    write_truth(&out.join("truth.json"), &truth, &grid).map_err(data_error)?;
    write_layout(&out.join("layout.json"), &layout_cfg).map_err(data_error)?;
    println!(
        "wrote {} frames of {}x{} to {} (seed {}, nyquist margin {:.3})",
        grid.len(),
        simulator.layout().focal_height(),
        simulator.layout().focal_width(),
        out.display(),
        config.seed,
        nyquist.margin
    );
    Ok(())
}

pub struct CharacterizeArgs<'a> {
    pub cube: &'a Path,
    pub layout: Option<&'a Path>,
    pub config: Option<&'a Path>,
    pub out: Option<&'a Path>,
    pub pixels: Option<&'a str>,
    pub jobs: Option<usize>,
    pub flags: PipelineFlags,
}

pub fn characterize(args: CharacterizeArgs<'_>) -> CliResult<()> {
    let mut config = RunConfig::load_or_default(args.config)?;
    args.flags.apply(&mut config.irca);
    if let Some(jobs) = args.jobs {
        config.jobs = Some(jobs);
    }
    let out = out_dir(args.out, &config)?;

    let cube = read_datacube(args.cube).map_err(data_error)?;
    let layout_cfg = match args.layout {
        Some(path) => read_layout(path).map_err(data_error)?,
        None => {
            let default_path = manifest_path(args.cube)
                .parent()
                .map(|d| d.join("layout.json"))
                .unwrap_or_else(|| PathBuf::from("layout.json"));
            match config.layout.clone() {
                Some(l) => l,
                None => read_layout(&default_path).map_err(|_| {
                    CliError::io(format!(
                        "no layout: pass --layout, add one to the config, or keep {} next to the cube",
                        default_path.display()
                    ))
                })?,
            }
        }
    };
    let layout = DeviceLayout::build(layout_cfg.clone()).map_err(CliError::config)?;

    let pixels_mode = args.pixels.unwrap_or(&config.pixels).to_string();
    let selector = parse_pixels(&pixels_mode)?;

    let run = || characterize_device(&cube, &layout, &config.irca, &selector);
    let outcome = match config.jobs {
        Some(jobs) if jobs > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::config(format!("cannot build worker pool: {e}")))?
            .install(run),
        _ => run(),
    }
    .map_err(|e| match e {
        etalon_core::Error::ShapeMismatch(_) => CliError::data(e),
        other => CliError::config(other),
    })?;

    let results = ResultsFile {
        format_version: FORMAT_VERSION,
        layout: layout_cfg,
        wavenumbers_cm1: cube.grid().sigma().to_vec(),
        regime: config.irca.regime,
        initializer: config.irca.initializer,
        degree: config.irca.degree,
        fixed_gain: config.irca.fixed_gain,
        pixel_mode: pixels_mode,
        normalization: NormalizationInfo {
            sigma_min_cm1: cube.grid().sigma_min(),
            sigma_max_cm1: cube.grid().sigma_max(),
            basis: NormalizedBasis::AffineUnitInterval,
        },
        results: outcome.results,
        failures: outcome.failures,
    };
    write_results(&out.join("results.json"), &results).map_err(data_error)?;
    write_text(
        &out.join("results.csv"),
        &results_to_csv(&results.results, config.irca.degree),
    )?;
    let converged = results.results.iter().filter(|r| r.converged).count();
    println!(
        "characterized {} pixels ({converged} converged, {} failed) -> {}",
        results.results.len(),
        results.failures.len(),
        out.display()
    );
    Ok(())
}

pub fn regimes(
    waves: &[u32],
    threshold: f64,
    phase_samples: usize,
    out: Option<&Path>,
) -> CliResult<()> {
    let mut waves: Vec<u32> = waves.to_vec();
    waves.sort_unstable();
    waves.dedup();
    if waves.is_empty() {
        return Err(CliError::config("no wave counts given"));
    }
    let mut csv = String::from("waves,max_reflectivity\n");
    for &w in &waves {
        let r = regime_max_reflectivity(WaveRegime::Finite(w), threshold, phase_samples)
            .map_err(CliError::config)?;
        csv.push_str(&format!("{w},{r}\n"));
    }
    match out {
        Some(dir) => {
            let path = dir.join("regimes.csv");
            write_text(&path, &csv)?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Rmse,
    OpdSteps,
    Maps,
}

impl std::str::FromStr for ReportKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rmse" => Ok(ReportKind::Rmse),
            "opd-steps" => Ok(ReportKind::OpdSteps),
            "maps" => Ok(ReportKind::Maps),
            _ => Err(format!(
                "invalid report kind {s:?}; expected rmse|opd-steps|maps"
            )),
        }
    }
}

pub fn report(results_path: &Path, kind: ReportKind, out: Option<&Path>) -> CliResult<()> {
    let file = read_results(results_path).map_err(data_error)?;
    let layout = DeviceLayout::build(file.layout.clone()).map_err(CliError::data)?;
    let out = out
        .map(Path::to_path_buf)
        .or_else(|| results_path.parent().map(Path::to_path_buf))
        .unwrap_or_default();

    match kind {
        ReportKind::Rmse => {
            let method = format!(
                "{}+trr{}",
                match file.initializer {
                    etalon_core::estimate::Initializer::Ml => "ml",
                    etalon_core::estimate::Initializer::Es => "es",
                },
                if file.fixed_gain { " fixed-gain" } else { "" }
            );
            let rep = fit_report(&file.results, &method, &file.regime.to_string());
            io::write_json(&out.join("rmse.json"), &rep).map_err(data_error)?;
            write_text(&out.join("rmse.csv"), &rep.to_csv())?;
            println!("{}", rep.summary_line());
        }
        ReportKind::OpdSteps => {
            let rep = opd_step_report(&file.results, &layout).map_err(CliError::data)?;
            io::write_json(&out.join("opd_steps.json"), &rep).map_err(data_error)?;
            write_text(&out.join("opd_steps.csv"), &rep.to_csv())?;
            println!(
                "wrote {} steps (nominal {} cm, {} missing)",
                rep.step_cm.len(),
                rep.nominal_step_cm,
                rep.missing.len()
            );
        }
        ReportKind::Maps => {
            if file.pixel_mode != "all" {
                return Err(CliError::data(
                    "full-plane results required: rerun characterize with --pixels all",
                ));
            }
            let grid = etalon_core::model::WavenumberGrid::new(file.wavenumbers_cm1.clone())
                .map_err(CliError::data)?;
            let maps = parameter_maps(&file.results, &layout, &grid).map_err(CliError::data)?;
            write_text(
                &out.join("map_relative_opd.csv"),
                &maps.map_to_csv(&maps.relative_opd),
            )?;
            write_text(
                &out.join("map_mean_reflectivity.csv"),
                &maps.map_to_csv(&maps.mean_reflectivity),
            )?;
            io::write_json(
                &out.join("maps.json"),
                &serde_json::json!({
                    "height": maps.height,
                    "width": maps.width,
                    "masked_count": maps.masked_count,
                    "skipped_subimages": maps.skipped_subimages,
                }),
            )
            .map_err(data_error)?;
            println!(
                "wrote maps ({} masked pixels, {} skipped subimages)",
                maps.masked_count,
                maps.skipped_subimages.len()
            );
        }
    }
    Ok(())
}
