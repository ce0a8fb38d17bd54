//! Subcommand implementations. Each writes a machine-readable report (JSON,
//! plus CSV for series) under the output directory and returns the process
//! exit code: 0 success, 2 config error, 3 cap exceeded, 4 a verification
//! check found violations (the report is still written first).

use crate::config::{self, ConfigError, Rat};
use num_traits::One;
use rayon::prelude::*;
use serde_json::{json, Value};
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};
use surfmix_core::coupling::{
    coupling_time, hitting_time_to_full, monotone_grid_check, potential_drift_check, summarize,
};
use surfmix_core::dynamics::{run, transition_probability, BiasField, ChainConfig};
use surfmix_core::metrics::{
    adjacent_pairs, exact_pair_drift, variance_condition_check, DriftBound,
};
use surfmix_core::numeric::{rat_to_f64, rat_to_string, rat_usize};
use surfmix_core::oracle::{ExactModel, StartSet};
use surfmix_core::region::{EnumerationTooLarge, Region};
use surfmix_core::rng::replica_seed;
use surfmix_core::slowmix::{bottleneck_report, SlowOptions};

pub enum CliError {
    Config(String),
    Cap(String),
    Io(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<EnumerationTooLarge> for CliError {
    fn from(e: EnumerationTooLarge) -> Self {
        CliError::Cap(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub struct Ctx<'a> {
    pub config: &'a Value,
    pub config_hash: String,
    pub out_dir: &'a Path,
    pub seed_override: Option<u64>,
}

impl Ctx<'_> {
    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        fs::create_dir_all(self.out_dir)?;
        let path = self.out_dir.join(name);
        fs::write(&path, contents)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn footer(&self) -> Value {
        json!({
            "config_hash": self.config_hash,
            "version": env!("CARGO_PKG_VERSION"),
        })
    }

    fn seed(&self, default: u64) -> Result<u64, ConfigError> {
        match self.seed_override {
            Some(s) => Ok(s),
            None => config::u64_or(self.config, "seed", default),
        }
    }
}

fn region_and_bias(ctx: &Ctx) -> Result<(Region, BiasField), CliError> {
    let region = config::parse_region(ctx.config)?;
    let bias = config::parse_bias(ctx.config, &region)?;
    Ok((region, bias))
}

fn timestamp_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Trajectory run: CSV series plus a JSON footer. Only the footer's `meta`
/// field carries the timestamp; everything else is a pure function of
/// (config, seed, version).
pub fn cmd_sample(ctx: &Ctx) -> Result<i32, CliError> {
    let (region, bias) = region_and_bias(ctx)?;
    let start = config::parse_start(ctx.config, &region, "start")?;
    let steps = config::u64_or(ctx.config, "steps", 10_000)?;
    let stride = config::u64_or(ctx.config, "stride", (steps / 1000).max(1))?;
    let seed = ctx.seed(1)?;

    let cfg = ChainConfig {
        start,
        seed,
        steps,
        stride,
    };
    let summary = run(&region, &bias, &cfg, &mut []);

    let mut csv = String::from("step,volume,peaks,valleys\n");
    for row in summary.rows.iter().filter(|r| r.t > 0) {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.t, row.volume, row.peaks, row.valleys
        ));
    }
    ctx.write("trajectory.csv", &csv)?;

    let footer = json!({
        "kind": "sample",
        "config_hash": ctx.config_hash,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "steps": steps,
        "stride": stride,
        "region_id": format!("{:016x}", region.hash_id()),
        "final_counts": summary.final_state.counts(),
        "final_volume": summary.final_state.volume(),
        "meta": { "generated_unix_ms": timestamp_ms().to_string() },
    });
    ctx.write("trajectory.json", &serde_json::to_string_pretty(&footer)?)?;
    Ok(0)
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn seed_list(master: u64, replicas: u64) -> Vec<u64> {
    (0..replicas).map(|k| replica_seed(master, k)).collect()
}

fn outcomes_csv(outcomes: &[surfmix_core::coupling::SeedOutcome]) -> String {
    let mut csv = String::from("seed,time,timeout\n");
    for o in outcomes {
        match o.time {
            Some(t) => csv.push_str(&format!("{},{},0\n", o.seed, t)),
            None => csv.push_str(&format!("{},,1\n", o.seed)),
        }
    }
    csv
}

fn stats_json(stats: &surfmix_core::coupling::TimeStats) -> Value {
    json!({
        "runs": stats.runs,
        "timeouts": stats.timeouts,
        "mean": stats.mean,
        "median": stats.median,
        "max": stats.max,
    })
}

/// Coalescence times of the shared-draw coupling from the extreme pair.
pub fn cmd_couple(ctx: &Ctx) -> Result<i32, CliError> {
    let (region, bias) = region_and_bias(ctx)?;
    let replicas = config::u64_or(ctx.config, "replicas", 100)?;
    let max_steps = config::u64_or(ctx.config, "max_steps", 10_000_000)?;
    let master = ctx.seed(1)?;
    let a = config::parse_start(ctx.config, &region, "start_low")?
        .build(&region)
        .expect("validated");
    let b = match ctx.config.get("start_high") {
        None => region.full(),
        Some(_) => config::parse_start(ctx.config, &region, "start_high")?
            .build(&region)
            .expect("validated"),
    };
    let seeds = seed_list(master, replicas);
    let outcomes = coupling_time(&region, &bias, (a, b), &seeds, max_steps);
    ctx.write("couple.csv", &outcomes_csv(&outcomes))?;
    let mut report = ctx.footer();
    report["kind"] = json!("couple");
    report["master_seed"] = json!(master);
    report["max_steps"] = json!(max_steps);
    report["stats"] = stats_json(&summarize(&outcomes));
    ctx.write("couple.json", &serde_json::to_string_pretty(&report)?)?;
    Ok(0)
}

/// Hitting times of the full state from the empty start.
pub fn cmd_hit(ctx: &Ctx) -> Result<i32, CliError> {
    let (region, bias) = region_and_bias(ctx)?;
    let replicas = config::u64_or(ctx.config, "replicas", 100)?;
    let max_steps = config::u64_or(ctx.config, "max_steps", 10_000_000)?;
    let master = ctx.seed(1)?;
    let seeds = seed_list(master, replicas);
    let outcomes = hitting_time_to_full(&region, &bias, &seeds, max_steps);
    ctx.write("hit.csv", &outcomes_csv(&outcomes))?;
    let mut report = ctx.footer();
    report["kind"] = json!("hit");
    report["master_seed"] = json!(master);
    report["max_steps"] = json!(max_steps);
    report["stats"] = stats_json(&summarize(&outcomes));
    ctx.write("hit.json", &serde_json::to_string_pretty(&report)?)?;
    Ok(0)
}

/// Exact drift over every adjacent pair; exit 4 when a pair violates the
/// contraction bound its bias regime asserts.
pub fn cmd_drift(ctx: &Ctx) -> Result<i32, CliError> {
    let (region, bias) = region_and_bias(ctx)?;
    let cap = config::enum_cap(ctx.config)?;
    let pairs = adjacent_pairs(&region, cap)?;
    let join = |c: &[u32]| {
        c.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join("|")
    };
    let rows: Vec<(String, Option<bool>)> = pairs
        .par_iter()
        .map(|(lo, hi)| {
            let rep = exact_pair_drift(&region, &bias, lo, hi)
                .map_err(|e| CliError::Config(format!("drift: {e}")))?;
            let (kind, bound_exact) = match &rep.bound {
                DriftBound::Uniform(b) => ("uniform", b.to_string()),
                DriftBound::Fluctuating(b) => ("fluctuating", b.to_string()),
                DriftBound::None => ("none", String::new()),
            };
            let line = format!(
                "{},{},{},{},{},{},{},{},{}\n",
                join(lo.counts()),
                join(hi.counts()),
                rep.phi.to_f64(),
                rep.drift.to_f64(),
                kind,
                bound_exact,
                rep.pass.map(|p| if p { "1" } else { "0" }).unwrap_or(""),
                rep.bad_choice_count,
                rep.drift,
            );
            Ok((line, rep.pass))
        })
        .collect::<Result<_, CliError>>()?;
    let mut csv = String::from(
        "from_counts,to_counts,phi,drift,bound_kind,bound_exact,pass,bad_choices,drift_exact\n",
    );
    let mut violations = 0usize;
    let mut unchecked = 0usize;
    for (line, pass) in &rows {
        csv.push_str(line);
        match pass {
            Some(false) => violations += 1,
            None => unchecked += 1,
            Some(true) => {}
        }
    }
    ctx.write("drift.csv", &csv)?;
    let mut report = ctx.footer();
    report["kind"] = json!("drift");
    report["pairs"] = json!(pairs.len());
    report["violations"] = json!(violations);
    report["without_hypothesis"] = json!(unchecked);
    ctx.write("drift.json", &serde_json::to_string_pretty(&report)?)?;
    Ok(if violations > 0 { 4 } else { 0 })
}

/// Exact-model diagnostics: stationarity, reversibility, and the worst-start
/// TV mixing time with a curve.
pub fn cmd_mix_exact(ctx: &Ctx) -> Result<i32, CliError> {
    let (region, bias) = region_and_bias(ctx)?;
    let cap = config::enum_cap(ctx.config)?;
    let eps = config::rat_or(ctx.config, "eps", Rat::new(1.into(), 4.into()))?;
    let budget = config::u64_or(ctx.config, "budget", 100_000)?;
    let model = ExactModel::build(&region, &bias, cap).map_err(|e| CliError::Cap(e.to_string()))?;
    let stationary = model.stationary_check();

    let engine = match ctx.config.get("engine").and_then(|v| v.as_str()) {
        Some("exact") => "exact",
        Some("f64") => "f64",
        None | Some("auto") => {
            if model.len() <= 64 {
                "exact"
            } else {
                "f64"
            }
        }
        Some(other) => {
            return Err(CliError::Config(format!(
                "config error: engine: unknown engine {other:?}"
            )))
        }
    };
    // Every start is the worst-start computation; past 10^4 states fall back
    // to the extremes, which lower-bounds the worst start.
    let all_starts = model.len() <= 10_000;
    let starts = if all_starts {
        StartSet::All
    } else {
        StartSet::Extremes
    };
    let mixing = match engine {
        "exact" => model.tv_mixing_time_exact(&eps, budget),
        _ => model.tv_mixing_time_f64(rat_to_f64(&eps), starts, budget),
    };
    let curve_len = mixing.tau.unwrap_or(budget).min(5_000);
    let curve = model.tv_worst_curve_f64(starts, curve_len);
    let mut csv = String::from("t,tv\n");
    for (t, tv) in curve.iter().enumerate() {
        csv.push_str(&format!("{t},{tv}\n"));
    }
    ctx.write("tv_curve.csv", &csv)?;

    if config::bool_or(ctx.config, "export_model", false)? {
        let export = json!({
            "config_hash": ctx.config_hash,
            "region_id": format!("{:016x}", region.hash_id()),
            "states": model.states.iter().map(|s| s.counts().to_vec()).collect::<Vec<_>>(),
            "pi": model.pi.iter().map(rat_to_string).collect::<Vec<_>>(),
            "z": rat_to_string(&model.z),
        });
        ctx.write("model.json", &serde_json::to_string_pretty(&export)?)?;
    }

    let mut report = ctx.footer();
    report["kind"] = json!("mix-exact");
    report["states"] = json!(model.len());
    report["engine"] = json!(engine);
    report["eps"] = json!(rat_to_string(&eps));
    report["worst_start"] = json!(if all_starts {
        "all"
    } else {
        "extremes_lower_bound"
    });
    report["stationary_ok"] = json!(stationary.ok);
    report["tau"] = json!(mixing.tau);
    report["tv_at_end"] = json!(mixing.tv_at_end);
    ctx.write("mix_exact.json", &serde_json::to_string_pretty(&report)?)?;
    Ok(if stationary.ok { 0 } else { 4 })
}

/// Bottleneck reports over one side length or a series.
pub fn cmd_slow(ctx: &Ctx) -> Result<i32, CliError> {
    let ns: Vec<u32> = match (ctx.config.get("n"), ctx.config.get("ns")) {
        (Some(n), None) => vec![config::as_u64(n, "n")? as u32],
        (None, Some(Value::Array(items))) => items
            .iter()
            .map(|x| config::as_u64(x, "ns").map(|v| v as u32))
            .collect::<Result<Vec<u32>, ConfigError>>()?,
        _ => {
            return Err(CliError::Config(
                "config error: expected \"n\" or \"ns\"".into(),
            ))
        }
    };
    let opts = SlowOptions {
        cap: config::enum_cap(ctx.config)?,
        compute_mixing: config::bool_or(ctx.config, "compute_mixing", true)?,
        tv_budget: config::u64_or(ctx.config, "tv_budget", 400_000)?,
        ..Default::default()
    };
    let force_sim = config::bool_or(ctx.config, "simulate", false)?;
    let sim_steps = config::u64_or(ctx.config, "sim_steps", 1_000_000)?;
    let sim_replicas = config::u64_or(ctx.config, "sim_replicas", 32)?;
    let sim_xi = match ctx.config.get("xi") {
        None | Some(Value::Null) => None,
        Some(v) => Some(config::rat_value(v, "xi")?),
    };
    let master = ctx.seed(1)?;

    let mut rows = Vec::new();
    let mut sim_csv = String::new();
    let mut csv = String::from(
        "n,m,eps,xi,tuned,pi_low,pi_cut,pi_high,phi_s1,mixing_lower_bound,tau,all_starts\n",
    );
    for &n in &ns {
        // Walk counts past the cap switch the lab to simulation mode: long
        // runs from both extremes, reported as evidence rather than proof.
        let enumerable = surfmix_core::oracle::binomial(2 * n as usize, n as usize)
            <= num_bigint::BigInt::from(opts.cap);
        if force_sim || !enumerable {
            let rep = surfmix_core::slowmix::simulation_report(
                n,
                sim_xi.clone(),
                sim_steps,
                sim_replicas,
                master,
            )
            .map_err(|e| CliError::Config(format!("config error: slow: {e}")))?;
            if sim_csv.is_empty() {
                sim_csv.push_str(
                    "n,xi,steps,replicas,mean_volume_from_empty,mean_volume_from_full,volume_overlap\n",
                );
            }
            sim_csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                rep.n,
                rat_to_f64(&rep.xi),
                rep.steps,
                rep.replicas,
                rep.mean_volume_from_empty,
                rep.mean_volume_from_full,
                rep.volume_overlap,
            ));
            rows.push(json!({
                "n": rep.n,
                "mode": "simulation",
                "evidence_only": true,
                "xi": rat_to_string(&rep.xi),
                "xi_tuned": false,
                "steps": rep.steps,
                "replicas": rep.replicas,
                "mean_volume_from_empty": rep.mean_volume_from_empty,
                "mean_volume_from_full": rep.mean_volume_from_full,
                "volume_overlap": rep.volume_overlap,
            }));
            continue;
        }
        let rep = bottleneck_report(n, &opts).map_err(|e| match e {
            surfmix_core::slowmix::SlowError::TooLarge(t) => CliError::Cap(t.to_string()),
            surfmix_core::slowmix::SlowError::Oracle(o) => CliError::Cap(o.to_string()),
            other => CliError::Config(format!("config error: slow: {other}")),
        })?;
        let lb = rep.conductance.mixing_lower_bound.clone();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            rep.n,
            rep.m,
            rat_to_f64(&rep.eps),
            rat_to_f64(&rep.xi),
            rep.tuned as u8,
            rat_to_f64(&rep.pi_low),
            rat_to_f64(&rep.pi_cut),
            rat_to_f64(&rep.pi_high),
            rat_to_f64(&rep.conductance.phi_s),
            lb.as_ref().map(rat_to_f64).unwrap_or(f64::NAN),
            rep.mixing
                .as_ref()
                .and_then(|m| m.tau)
                .map(|t| t.to_string())
                .unwrap_or_default(),
            rep.all_starts as u8,
        ));
        rows.push(json!({
            "n": rep.n,
            "mode": "exact",
            "m": rep.m,
            "eps": rat_to_string(&rep.eps),
            "xi": rat_to_string(&rep.xi),
            "xi_approx": rat_to_f64(&rep.xi),
            "tuned": rep.tuned,
            "bracket_failure": rep.bracket_failure.map(|(lo, hi)| json!({
                "sign_g_lo": lo, "sign_g_hi": hi,
            })),
            "class_sizes": [rep.sizes.0, rep.sizes.1, rep.sizes.2],
            "pi_low": rat_to_string(&rep.pi_low),
            "pi_cut": rat_to_string(&rep.pi_cut),
            "pi_high": rat_to_string(&rep.pi_high),
            "phi_s1": rat_to_string(&rep.conductance.phi_s),
            "mixing_lower_bound": lb.as_ref().map(rat_to_string),
            "low_to_high_edges": rep.low_to_high_edges,
            "tau": rep.mixing.as_ref().and_then(|m| m.tau),
            "tv_at_end": rep.mixing.as_ref().map(|m| m.tv_at_end),
            "all_starts": rep.all_starts,
        }));
    }
    ctx.write("slow_series.csv", &csv)?;
    if !sim_csv.is_empty() {
        ctx.write("slow_sim.csv", &sim_csv)?;
    }
    let mut report = ctx.footer();
    report["kind"] = json!("slow");
    report["instances"] = json!(rows);
    ctx.write("slow.json", &serde_json::to_string_pretty(&report)?)?;
    Ok(0)
}

/// Structural verifications on an enumerable region; exit 4 on violations.
pub fn cmd_lemmas(ctx: &Ctx) -> Result<i32, CliError> {
    let region = config::parse_region(ctx.config)?;
    let bias = if ctx.config.get("bias").is_some() {
        config::parse_bias(ctx.config, &region)?
    } else {
        BiasField::uniform(&region, Rat::from_integer(2.into())).expect("2 >= 1")
    };
    let cap = config::enum_cap(ctx.config)?;
    let default_checks = vec![
        "peak_valley".to_string(),
        "bad_moves".into(),
        "laziness".into(),
        "exclusivity".into(),
    ];
    let checks: Vec<String> = match ctx.config.get("checks") {
        None => default_checks,
        Some(Value::Array(items)) => items
            .iter()
            .map(|x| {
                x.as_str()
                    .map(String::from)
                    .ok_or_else(|| ConfigError("checks: expected strings".into()))
            })
            .collect::<Result<_, _>>()?,
        Some(_) => {
            return Err(CliError::Config(
                "config error: checks: expected an array".into(),
            ))
        }
    };

    let states = region.enumerate_downsets(cap)?;
    let mut results = Vec::new();
    let mut failed = false;
    for check in &checks {
        let entry = match check.as_str() {
            "peak_valley" => {
                let rep = region.lemma_peak_valley_check(cap)?;
                json!({
                    "check": "peak_valley",
                    "pass": rep.ok(),
                    "states": rep.checked,
                    "max_excess": rep.max_excess,
                })
            }
            "bad_moves" => {
                let mut worst = 0usize;
                for (lo, hi) in adjacent_pairs(&region, cap)? {
                    let rep = exact_pair_drift(&region, &bias, &lo, &hi)
                        .map_err(|e| CliError::Config(format!("config error: bad_moves: {e}")))?;
                    worst = worst.max(rep.bad_choice_count);
                }
                json!({
                    "check": "bad_moves",
                    "pass": worst <= region.dim(),
                    "worst": worst,
                    "limit": region.dim(),
                })
            }
            "laziness" => {
                let mut min_stay: Option<Rat> = None;
                for s in &states {
                    let stay = transition_probability(&region, &bias, s, s);
                    min_stay = Some(match min_stay.take() {
                        Some(m) => m.min(stay),
                        None => stay,
                    });
                }
                let min_stay = min_stay.expect("nonempty state space");
                json!({
                    "check": "laziness",
                    "pass": min_stay >= Rat::new(1.into(), 2.into()),
                    "min_hold_probability": rat_to_string(&min_stay),
                })
            }
            "exclusivity" => {
                let mut both = 0usize;
                for s in &states {
                    for ray in 0..region.span() {
                        if region.can_add(s, ray).is_some() && region.can_remove(s, ray).is_some() {
                            both += 1;
                        }
                    }
                }
                json!({
                    "check": "exclusivity",
                    "pass": both == 0,
                    "rays_offering_both_moves": both,
                })
            }
            "potential" => {
                let rep = potential_drift_check(&region, &bias, cap)?;
                json!({
                    "check": "potential",
                    "pass": rep.ok(),
                    "bound": rat_to_string(&rep.bound),
                    "max_drift": rat_to_string(&rep.max_drift),
                    "violations": rep.violations.iter().map(|(c, d)| json!({
                        "counts": c, "drift": rat_to_string(d),
                    })).collect::<Vec<_>>(),
                })
            }
            "variance" => {
                let eta = Rat::one() / rat_usize(2 * region.span());
                let rep = variance_condition_check(&region, &bias, &eta, &eta, cap, 200_000)?;
                json!({
                    "check": "variance",
                    "pass": rep.ok,
                    "eta": rat_to_string(&eta),
                    "kappa": rat_to_string(&eta),
                    "pairs": rep.pairs_checked,
                    "min_probability": rat_to_string(&rep.min_probability),
                })
            }
            "monotone" => {
                let rep = monotone_grid_check(&region, &bias, cap)?;
                json!({
                    "check": "monotone",
                    "pass": rep.violations == 0,
                    "ordered_pairs": rep.ordered_pairs,
                    "violations": rep.violations,
                })
            }
            other => {
                return Err(CliError::Config(format!(
                    "config error: checks: unknown check {other:?}"
                )))
            }
        };
        if entry["pass"] != json!(true) {
            failed = true;
        }
        results.push(entry);
    }
    let mut report = ctx.footer();
    report["kind"] = json!("lemmas");
    report["states"] = json!(states.len());
    report["checks"] = json!(results);
    ctx.write("lemmas.json", &serde_json::to_string_pretty(&report)?)?;
    Ok(if failed { 4 } else { 0 })
}
