//! Evaluates generator parameters against the study's target pattern.
//!
//! ```text
//! cargo run --release --example calibrate -- --reps 50 --n 1000 [--params p.toml]
//! ```

use std::path::PathBuf;

use clap::Parser;
use survatt::simulate::GeneratorParams;
use survatt::study::{replicate_study, Analysis, StudyConfig};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// TOML file with generator parameters.
    #[arg(long)]
    params: Option<PathBuf>,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args = Args::parse();
    let params: GeneratorParams = match &args.params {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
        None => GeneratorParams::default(),
    };
    let mut config = StudyConfig::new(args.reps, args.n, args.seed);
    config.params = params;
    let result = replicate_study(&config)?;

    println!("regime  treated  events  clamp   weight  failed");
    for r in &result.regimes {
        println!(
            "{:<7} {:>7.3} {:>7.3} {:>7.4} {:>7.3} {:>6}",
            r.regime.label(),
            r.mean_stat(|x| x.treated_share).unwrap_or(f64::NAN),
            r.mean_stat(|x| x.event_share).unwrap_or(f64::NAN),
            r.mean_stat(|x| x.clamp_rate).unwrap_or(f64::NAN),
            r.mean_stat(|x| x.mean_treat_weight).unwrap_or(f64::NAN),
            r.n_failed(),
        );
    }
    println!();
    print!("{:<28}", "hazard ratio");
    for r in &result.regimes {
        print!(" {:>8}", r.regime.label());
    }
    println!();
    for a in Analysis::TABLE {
        print!("{:<28}", a.label());
        for r in &result.regimes {
            print!(" {:>8.4}", r.mean_hazard_ratio(a).unwrap_or(f64::NAN));
        }
        println!();
    }
    println!();
    println!("regime  range(sim)  sup|dir-short|/range  sup|short-sim|/range  sup|sim-truth|/range");
    for r in &result.regimes {
        let sim = r.mean_curve(Analysis::Simulated).unwrap();
        let short = r.mean_curve(Analysis::Shortcut).unwrap();
        let direct = r.mean_curve(Analysis::Direct).unwrap();
        let truth = r.mean_truth().unwrap();
        let range = sim.range();
        println!(
            "{:<7} {:>10.4} {:>21.3} {:>21.3} {:>21.3}",
            r.regime.label(),
            range,
            direct.sup_distance(&short) / range,
            short.sup_distance(&sim) / range,
            sim.sup_distance(&truth) / range,
        );
    }
    let mut line = String::from("metrics");
    for r in &result.regimes {
        let g = r.regime.label();
        for a in Analysis::TABLE {
            line += &format!(" r{g}.{}={:.5}", a.label(), r.mean_hazard_ratio(a).unwrap_or(f64::NAN));
        }
        let sim = r.mean_curve(Analysis::Simulated).unwrap();
        let short = r.mean_curve(Analysis::Shortcut).unwrap();
        let direct = r.mean_curve(Analysis::Direct).unwrap();
        line += &format!(
            " r{g}.c4={:.5} r{g}.c5={:.5} r{g}.treated={:.4} r{g}.events={:.4} r{g}.clamp={:.5} r{g}.weight={:.4}",
            direct.sup_distance(&short) / sim.range(),
            short.sup_distance(&sim) / sim.range(),
            r.mean_stat(|x| x.treated_share).unwrap_or(f64::NAN),
            r.mean_stat(|x| x.event_share).unwrap_or(f64::NAN),
            r.mean_stat(|x| x.clamp_rate).unwrap_or(f64::NAN),
            r.mean_stat(|x| x.mean_treat_weight).unwrap_or(f64::NAN),
        );
    }
    println!("{line}");
    println!();
    for r in &result.regimes {
        println!(
            "regime {} mean curves (t: sim short direct msm naiveB truth)",
            r.regime.label()
        );
        let curves: Vec<_> = [
            Analysis::Simulated,
            Analysis::Shortcut,
            Analysis::Direct,
            Analysis::Msm,
            Analysis::NaiveTreatment,
        ]
        .iter()
        .map(|a| r.mean_curve(*a).unwrap())
        .chain(r.mean_truth())
        .collect();
        for t in 0..=config.params.t_max {
            print!("  {t:>2}:");
            for c in &curves {
                print!(" {:>8.4}", c.at(t));
            }
            println!();
        }
    }
    Ok(())
}
