//! Seeded benchmark matrix over synthetic scenes.

use std::fs;
use std::path::Path;

use planmatch_core::pipeline::{bench_ambiguity_seed, bench_standard_seed};

use crate::store::{CliError, CliResult};

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn cell(values: &[f64]) -> String {
    let (m, s) = mean_std(values);
    format!("{:5.1}% ± {:4.1}", m * 100.0, s * 100.0)
}

pub fn cmd_bench(out: &Path, seeds: u64, scenario: &str) -> CliResult<()> {
    if seeds == 0 {
        return Err(CliError::bad_input("need at least one seed"));
    }
    fs::create_dir_all(out)?;
    match scenario {
        "standard" => {
            let mut rows = Vec::new();
            for seed in 0..seeds {
                let row = bench_standard_seed(seed)?;
                println!(
                    "seed {seed}: ours top1 {:.0}% | naive {:.0}% | masked {:.0}% | dt {:.0}% | final SF {:.0}% SF+SS {:.0}% all {:.0}%",
                    row.ours_top1 * 100.0,
                    row.naive_top1 * 100.0,
                    row.masked_top1 * 100.0,
                    row.dt_top1 * 100.0,
                    row.err_sf * 100.0,
                    row.err_sf_ss * 100.0,
                    row.err_all * 100.0
                );
                rows.push(row);
            }
            let mut csv = String::from(
                "seed,ours_top1,ours_top5,naive_top1,naive_top5,masked_top1,masked_top5,dt_top1,dt_top5,err_sf,err_sf_ss,err_all\n",
            );
            for r in &rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    r.seed,
                    r.ours_top1,
                    r.ours_top5,
                    r.naive_top1,
                    r.naive_top5,
                    r.masked_top1,
                    r.masked_top5,
                    r.dt_top1,
                    r.dt_top5,
                    r.err_sf,
                    r.err_sf_ss,
                    r.err_all
                ));
            }
            fs::write(out.join("standard.csv"), csv)?;
            let col = |f: fn(&planmatch_core::pipeline::StandardRow) -> f64| -> Vec<f64> {
                rows.iter().map(f).collect()
            };
            println!("\nmetric            top-1             top-5");
            println!("ours          {}   {}", cell(&col(|r| r.ours_top1)), cell(&col(|r| r.ours_top5)));
            println!("masked SSD    {}   {}", cell(&col(|r| r.masked_top1)), cell(&col(|r| r.masked_top5)));
            println!("dist. transf. {}   {}", cell(&col(|r| r.dt_top1)), cell(&col(|r| r.dt_top5)));
            println!("naive SSD     {}   {}", cell(&col(|r| r.naive_top1)), cell(&col(|r| r.naive_top5)));
            println!("\nfinal error   SF {}  SF+SS {}  SF+SS+F {}",
                cell(&col(|r| r.err_sf)),
                cell(&col(|r| r.err_sf_ss)),
                cell(&col(|r| r.err_all)));
            println!("\nresults written to {}", out.join("standard.csv").display());
        }
        "ambiguity" => {
            let mut rows = Vec::new();
            for seed in 0..seeds {
                let row = bench_ambiguity_seed(seed)?;
                println!(
                    "seed {seed}: SF+SS err {:.0}% stack {} | SF+SS+F err {:.0}% stack {}",
                    row.err_sf_ss * 100.0,
                    row.stack_sf_ss,
                    row.err_all * 100.0,
                    row.stack_all
                );
                rows.push(row);
            }
            let mut csv = String::from("seed,err_sf_ss,err_all,stack_sf_ss,stack_all\n");
            for r in &rows {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.seed, r.err_sf_ss, r.err_all, r.stack_sf_ss, r.stack_all
                ));
            }
            fs::write(out.join("ambiguity.csv"), csv)?;
            let errs_ss: Vec<f64> = rows.iter().map(|r| r.err_sf_ss).collect();
            let errs_all: Vec<f64> = rows.iter().map(|r| r.err_all).collect();
            let stacks_ss: usize = rows.iter().map(|r| r.stack_sf_ss).sum();
            let stacks_all: usize = rows.iter().map(|r| r.stack_all).sum();
            println!("\nSF+SS    error {}  stacked pairs {}", cell(&errs_ss), stacks_ss);
            println!("SF+SS+F  error {}  stacked pairs {}", cell(&errs_all), stacks_all);
            println!("\nresults written to {}", out.join("ambiguity.csv").display());
        }
        other => {
            return Err(CliError::bad_input(format!(
                "unknown scenario {other}; use standard or ambiguity"
            )))
        }
    }
    Ok(())
}
