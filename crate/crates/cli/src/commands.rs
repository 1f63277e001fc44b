//! One function per subcommand. Each returns the seeds it used.

use rayon::prelude::*;
use serde_json::json;

use swarmflow::diagnostics::{self, LyapunovPoint, SweepConfig};
use swarmflow::pde1d::{self, DtPolicy, EvolveOptions};
use swarmflow::schedules::{self, COfBeta};
use swarmflow::stationary;
use swarmflow::swarm::{self, BandwidthPolicy, GrowthPolicy, RunOptions, StepOptions};
use swarmflow::{CircleGrid, GluedPower, GridDensity, Kernel, Landscape, PotentialSpec, Schedule, SwarmState};

use crate::config::ExperimentConfig;
use crate::output::{time_tag, Cell, Csv, OutDir};
use crate::Failure;

fn landscape(c: &ExperimentConfig) -> Result<Landscape, Failure> {
    Ok(Landscape::builtin(
        c.str("landscape.name"),
        &c.landscape_params(),
        c.usize("landscape.dim"),
        c.num("landscape.period"),
    )?)
}

fn potential(c: &ExperimentConfig) -> Result<PotentialSpec, Failure> {
    Ok(match c.str("potential.kind") {
        "boltzmann" => PotentialSpec::boltzmann(),
        _ => PotentialSpec::glued(c.num("potential.m"))?,
    })
}

/// `gamma` of `phi_{m,2}` at `potential.m`, also used by the Boltzmann baseline.
fn glued(c: &ExperimentConfig) -> Result<GluedPower, Failure> {
    Ok(GluedPower::new(c.num("potential.m"))?)
}

fn schedule(c: &ExperimentConfig) -> Result<Schedule, Failure> {
    let gamma = glued(c)?.gamma();
    let k = c.num("schedule.k");
    let t0 = c.num("schedule.t0");
    Ok(match c.str("schedule.kind") {
        "power" => {
            let exponent = c
                .opt_num("schedule.exponent")
                .unwrap_or_else(|| schedules::default_exponent(gamma));
            Schedule::power(k, exponent, t0)?
        }
        "inverse_gamma" => Schedule::inverse_gamma(k, gamma, t0)?,
        _ => Schedule::constant(c.num("schedule.beta"))?,
    })
}

fn c_of_beta(c: &ExperimentConfig, l: &Landscape) -> Result<COfBeta, Failure> {
    let g = glued(c)?;
    Ok(match c.str("c.kind") {
        "explicit" => COfBeta::Explicit {
            glued: g,
            osc: l.osc(),
            perimeter: l.period(),
        },
        _ => COfBeta::Power {
            kappa: c.num("c.kappa"),
            gamma: g.gamma(),
        },
    })
}

fn record_times(c: &ExperimentConfig, t_start: f64, t_end: f64) -> Vec<f64> {
    let count = c.usize("run.records").max(1);
    match c.str("run.spacing") {
        "geometric" => pde1d::geometric_times(c.num("run.t_first"), t_end, count),
        _ => pde1d::uniform_times(t_start, t_end, count),
    }
}

fn t_end(c: &ExperimentConfig) -> Result<f64, Failure> {
    let t = c.num("run.t_end");
    if t > 0.0 {
        Ok(t)
    } else {
        Err(Failure::config(format!("run.t_end must be positive, got {t}")))
    }
}

pub fn stationary(c: &ExperimentConfig, out: &mut OutDir) -> Result<Vec<u64>, Failure> {
    let l = landscape(c)?;
    let spec = potential(c)?;
    let beta = c.num("schedule.beta");
    let mu = stationary::solve_stationary(&spec, &l, beta, c.usize("grid.n"), 1e-14)?;
    let mut csv = Csv::new(&["x", "U", "mu"]);
    for (i, (&u, &m)) in mu.u_values().iter().zip(mu.values()).enumerate() {
        csv.row(vec![mu.grid().x(i).into(), u.into(), m.into()]);
    }
    out.csv("stationary.csv", csv)?;
    out.json(
        "stationary.json",
        &json!({
            "beta": beta,
            "c_star": mu.c_star(),
            "mu_min": mu.mu_min(),
            "mu_max": mu.mu_max(),
            "gap": stationary::gap_of(&spec, &l, &mu),
        }),
    )?;
    Ok(Vec::new())
}

pub fn pde(c: &ExperimentConfig, out: &mut OutDir) -> Result<Vec<u64>, Failure> {
    let l = landscape(c)?;
    let spec = potential(c)?;
    let sched = schedule(c)?;
    let grid = CircleGrid::new(c.usize("grid.n"), l.period())?;
    let seed = c.int("run.seed");
    let (init, seeds) = match c.str("pde.init") {
        "random" => {
            let p = diagnostics::RandomDensity::seeded(seed, 8);
            let period = l.period();
            (GridDensity::from_fn(grid, |x| p.log_perturbation(x, period).exp())?, vec![seed])
        }
        _ => (GridDensity::uniform(grid), Vec::new()),
    };
    let t_end = t_end(c)?;
    let policy = match c.str("solver.policy") {
        "explicit" => DtPolicy::Explicit {
            safety: c.num("solver.safety"),
        },
        _ => DtPolicy::Implicit {
            dt0: c.num("solver.dt0"),
            dt_min: 1e-14,
            dt_max: c.num("solver.dt_max"),
            growth: 1.5,
            newton_tol: c.num("solver.newton_tol"),
        },
    };
    let opts = EvolveOptions {
        policy,
        record_times: record_times(c, 0.0, t_end),
        profile_times: c.list("run.profile_times"),
    };
    let traj = pde1d::evolve(&init, &spec, &l, &sched, t_end, &opts)?;
    let mut csv = Csv::new(&["t", "beta", "I", "J", "mean_U", "L1_dist_to_mu", "mass"]);
    for s in &traj.snapshots {
        csv.row(vec![
            s.t.into(),
            s.beta.into(),
            s.i.into(),
            s.j.into(),
            s.mean_u.into(),
            s.l1_to_mu.into(),
            s.mass.into(),
        ]);
    }
    out.csv("pde.csv", csv)?;
    for (t, rho) in &traj.profiles {
        let mut prof = Csv::new(&["x", "rho"]);
        for (i, &r) in rho.iter().enumerate() {
            prof.row(vec![grid.x(i).into(), r.into()]);
        }
        out.csv(&format!("pde_profile_t{}.csv", time_tag(*t)), prof)?;
    }
    out.json(
        "pde.json",
        &json!({
            "steps": traj.steps,
            "rejected": traj.rejected,
            "max_energy_increase": traj.max_energy_increase,
            "max_mass_drift": traj.max_mass_drift,
        }),
    )?;
    Ok(seeds)
}

pub fn swarm(c: &ExperimentConfig, out: &mut OutDir) -> Result<Vec<u64>, Failure> {
    let l = landscape(c)?;
    let spec = potential(c)?;
    let sched = schedule(c)?;
    let kernel = Kernel::bump(l.dim())?;
    let t_end = t_end(c)?;
    let dt = c.num("swarm.dt");
    if !(dt > 0.0) {
        return Err(Failure::config("swarm.dt must be positive"));
    }
    let h = c.num("swarm.h");
    let q = c.num("swarm.h_decay");
    let growth = match c.int("swarm.growth_interval") {
        0 => GrowthPolicy::None,
        interval => GrowthPolicy::Duplicate {
            interval,
            count: c.usize("swarm.growth_count"),
            max_n: c.usize("swarm.growth_max_n"),
        },
    };
    let opts = RunOptions {
        step: StepOptions {
            noise_factor: c.num("swarm.noise_factor"),
            alpha_cap: c.num("swarm.alpha_cap"),
            growth,
        },
        bandwidth: if q > 0.0 {
            BandwidthPolicy::PowerDecay { h0: h, q }
        } else {
            BandwidthPolicy::Constant
        },
        record_every: c.int("swarm.record_every"),
        r_basin: c.num("swarm.r_basin"),
        mu_grid_n: match c.usize("swarm.mu_grid_n") {
            0 => None,
            n => Some(n),
        },
        dump_steps: c
            .list("swarm.dump_times")
            .iter()
            .map(|&t| (t / dt).round().max(1.0) as u64)
            .collect(),
    };
    let first = c.int("run.seed");
    let seeds: Vec<u64> = (0..c.int("run.seeds").max(1)).map(|k| first + k).collect();
    let n = c.usize("swarm.n");
    let dim = l.dim();
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let init = SwarmState::uniform(n, dim, h, seed)?;
            swarm::run_swarm(&init, &spec, &l, &kernel, &sched, t_end, dt, &opts)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut summary = Csv::new(&["seed", "t", "beta", "N", "mean_U", "basin_fraction", "alpha_cap_hits"]);
    for (&seed, run) in seeds.iter().zip(&runs) {
        let mut csv = Csv::new(&[
            "t",
            "beta",
            "h",
            "N",
            "mean_U",
            "basin_fraction",
            "kde_l1_to_mu",
            "alpha_cap_hits",
        ]);
        for s in &run.summaries {
            csv.row(vec![
                s.t.into(),
                s.beta.into(),
                s.h.into(),
                s.n.into(),
                s.mean_u.into(),
                s.basin_fraction.into(),
                s.kde_l1_to_mu.into(),
                s.alpha_cap_hits.into(),
            ]);
        }
        out.csv(&format!("swarm_seed{seed}.csv"), csv)?;
        for (t, pos) in &run.dumps {
            let axes: Vec<String> = (0..dim).map(|a| format!("x{a}")).collect();
            let header: Vec<&str> = axes.iter().map(String::as_str).collect();
            let mut d = Csv::new(&header);
            for p in pos.chunks(dim) {
                d.row(p.iter().map(|&x| Cell::F(x)).collect());
            }
            out.csv(&format!("swarm_seed{seed}_t{}.csv", time_tag(*t)), d)?;
        }
        let last = run.summaries.last().expect("at least the initial summary");
        summary.row(vec![
            seed.into(),
            last.t.into(),
            last.beta.into(),
            last.n.into(),
            last.mean_u.into(),
            last.basin_fraction.into(),
            last.alpha_cap_hits.into(),
        ]);
    }
    out.csv("swarm_summary.csv", summary)?;
    Ok(seeds)
}

fn sweep_config(c: &ExperimentConfig) -> SweepConfig {
    SweepConfig {
        betas: c.list("check.betas"),
        ms: c.list("check.ms"),
        per_cell: c.usize("check.count"),
        grid_n: c.usize("check.grid_n"),
        grid_slack: c.num("check.slack"),
        max_order: c.int("check.order") as u32,
        kappa_tal: c.num("check.kappa_tal"),
        base_seed: c.int("run.seed"),
    }
}

/// Returns the seeds and whether every functional-inequality check passed.
pub fn check_fi(c: &ExperimentConfig, out: &mut OutDir) -> Result<(Vec<u64>, bool), Failure> {
    let l = landscape(c)?;
    let (rows, summary) = diagnostics::sweep(&l, &sweep_config(c))?;
    let mut csv = Csv::new(&[
        "seed",
        "beta",
        "m",
        "I",
        "J",
        "rhs",
        "ratio",
        "pass",
        "ratio_bound",
        "refined",
        "chain_pass",
    ]);
    for r in &rows {
        csv.row(vec![
            r.seed.into(),
            r.beta.into(),
            r.m.into(),
            r.i.into(),
            r.j.into(),
            r.rhs.into(),
            r.ratio.into(),
            r.pass.into(),
            r.ratio_bound.into(),
            r.refined.into(),
            r.chain.all().into(),
        ]);
    }
    out.csv("check_fi.csv", csv)?;
    out.json("check_fi.json", &summary)?;
    let ok = summary.passed == summary.total;
    Ok((rows.iter().map(|r| r.seed).collect(), ok))
}

pub fn talagrand(c: &ExperimentConfig, out: &mut OutDir) -> Result<Vec<u64>, Failure> {
    let l = landscape(c)?;
    let (rows, summary) = diagnostics::sweep(&l, &sweep_config(c))?;
    let mut csv = Csv::new(&["seed", "beta", "m", "I", "W2", "rhs", "ratio", "pass"]);
    for r in &rows {
        let t = &r.talagrand;
        csv.row(vec![
            r.seed.into(),
            r.beta.into(),
            r.m.into(),
            t.i.into(),
            t.w2.into(),
            t.rhs.into(),
            t.ratio.into(),
            t.pass.into(),
        ]);
    }
    out.csv("talagrand.csv", csv)?;
    out.json(
        "talagrand.json",
        &json!({
            "total": summary.total,
            "passed": summary.talagrand_passed,
            "min_ratio": summary.min_talagrand_ratio,
        }),
    )?;
    Ok(rows.iter().map(|r| r.seed).collect())
}

pub fn lyapunov(c: &ExperimentConfig, out: &mut OutDir) -> Result<Vec<u64>, Failure> {
    let l = landscape(c)?;
    let g = glued(c)?;
    let sched = schedule(c)?;
    let cb = c_of_beta(c, &l)?;
    let t0 = c.num("lyapunov.t0");
    let t_end = t_end(c)?;
    if !(t_end > t0 && t0 > 0.0) {
        return Err(Failure::config("need 0 < lyapunov.t0 < run.t_end"));
    }
    let times = pde1d::geometric_times(t0, t_end, c.usize("lyapunov.records").max(2));
    let pts: Vec<LyapunovPoint> = diagnostics::lyapunov_bound(
        c.num("lyapunov.v0"),
        &sched,
        |b| cb.eval(b),
        |v| g.omega_big(v),
        c.num("lyapunov.delta"),
        t0,
        t_end,
        &times,
    )?;
    let mut csv = Csv::new(&["t", "v", "beta"]);
    for p in pts {
        csv.row(vec![p.t.into(), p.v.into(), p.beta.into()]);
    }
    out.csv("lyapunov.csv", csv)?;
    Ok(Vec::new())
}

/// Returns whether the verdict is not a failure.
pub fn schedule_validate(c: &ExperimentConfig, out: &mut OutDir) -> Result<bool, Failure> {
    let l = landscape(c)?;
    let sched = schedule(c)?;
    let cb = c_of_beta(c, &l)?;
    let report = schedules::validate_schedule(&sched, &cb, c.num("schedule.horizon"))?;
    let mut ratios = Csv::new(&["t", "beta", "ratio"]);
    for (&t, &r) in report.times.iter().zip(&report.ratios) {
        ratios.row(vec![t.into(), sched.beta_at(t).into(), r.into()]);
    }
    out.csv("schedule_ratio.csv", ratios)?;
    let mut integrals = Csv::new(&["T", "partial_integral"]);
    for (&t, &v) in report.doubling_times.iter().zip(&report.partial_integrals) {
        integrals.row(vec![t.into(), v.into()]);
    }
    out.csv("schedule_integral.csv", integrals)?;
    out.json(
        "schedule_validate.json",
        &json!({
            "verdict": report.verdict,
            "condition_ratio": report.condition_ratio,
            "condition_integral": report.condition_integral,
            "ratio_tail_slope": report.ratio_tail_slope,
            "increment_tail_slope": report.increment_tail_slope,
            "note": report.note,
        }),
    )?;
    Ok(report.verdict != schedules::Verdict::Fail)
}
