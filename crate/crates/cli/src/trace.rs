//! The `trace-report` command: selection counts, the tail mixing ratio, and
//! a windowed policy-probability table for plotting.

use std::path::PathBuf;

use clap::Args;
use textsimp_core::bandit::BanditTrace;
use textsimp_core::trainer::ratio_from_trace;
use textsimp_core::{Error, Result};

#[derive(Args)]
pub struct TraceArgs {
    /// Trace CSV written by a dynamic or random training run
    #[arg(long)]
    pub trace: PathBuf,
    /// Fraction of the trace tail counted into the ratio
    #[arg(long, default_value_t = 0.1)]
    pub fraction: f64,
    /// Rounds averaged into each probability-table row
    #[arg(long, default_value_t = 10)]
    pub window: usize,
}

pub fn cmd_trace_report(args: TraceArgs) -> Result<()> {
    if args.window == 0 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    let trace = BanditTrace::load_csv(&args.trace)?;
    let arms = trace
        .records()
        .first()
        .map(|r| r.policy.len())
        .ok_or_else(|| Error::Data("trace has no rounds".into()))?;

    println!("rounds = {}", trace.len());
    for arm in 0..arms {
        let n = trace.records().iter().filter(|r| r.arm == arm).count();
        println!("arm_{arm}_count = {n}");
    }
    let ratio = ratio_from_trace(&trace, args.fraction, arms)?;
    let ratio: Vec<String> = ratio.iter().map(u32::to_string).collect();
    println!("tail_fraction = {}", args.fraction);
    println!("tail_ratio = {}", ratio.join(":"));

    // Mean selection probability per window of rounds — one row per window,
    // ready for external plotting.
    println!();
    let header: Vec<String> = (0..arms).map(|a| format!("p_{a}_avg")).collect();
    println!("round,{}", header.join(","));
    for chunk in trace.records().chunks(args.window) {
        let mut means = vec![0.0; arms];
        for rec in chunk {
            for (m, p) in means.iter_mut().zip(&rec.policy) {
                *m += p;
            }
        }
        let row: Vec<String> = means
            .iter()
            .map(|m| format!("{:.6}", m / chunk.len() as f64))
            .collect();
        println!("{},{}", chunk.last().unwrap().round, row.join(","));
    }
    Ok(())
}
