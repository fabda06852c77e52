//! Stage orchestration and artifact emission.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use ytower_core::critical_orbit::{
    check_summability, closest_returns, compute_dn_log, critical_tables, fibonacci_scaling_check,
    fibonacci_times, find_fibonacci_parameter, scaled_inverse_sqrt, CriticalOrbitTable,
    GammaStrategy,
};
use ytower_core::decay::{classify_log_growth, DecayClass, SequenceKind};
use ytower_core::full_return::{
    build_return_map_with_budget, check_holder_distortion, choose_omega0, conditional_tail_check,
    renormalization_test, support, tail_of_r, verify_markov, Omega0Choice, Renormalization,
    ReturnMapQ,
};
use ytower_core::inducing::large_scale::{
    check_size_lemma, distortion_constant, induce_to_large_scale, tail_of_phat, TailStats,
};
use ytower_core::inducing::levels::{build_level_sets, LevelSets};
use ytower_core::inducing::{estimate_outside_expansion, fix_delta, BindingConfig, DeltaOptions};
use ytower_core::tower_stats::{
    assemble_tower, build_tower, check_commutation, clt_test, correlation, fit_correlation_decay,
    invariant_density, tower_tail_identity, DensityMethod, MeasureEstimate,
};
use ytower_core::{Error, IntervalMap, MapSpec};

use crate::config::{ConfigError, GammaChoice, Params, RunConfig, Stage};

/// Sup of the tail of `p_hat` is taken over this many intervals of length
/// `delta''` spread across the support.
const NET_SIZE: usize = 16;
const HOLDER_SLACK: f64 = 1.1;
const CONDITIONAL_SLACK: f64 = 1.2;
const COMMUTATION_SAMPLES: usize = 1000;
const OUTSIDE_SAMPLES: usize = 4000;
const RENORMALIZATION_HORIZON: usize = 2000;

#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    /// A dynamical hypothesis of the construction does not hold for the map.
    Hypothesis {
        stage: &'static str,
        hypothesis: &'static str,
        error: Error,
    },
    Internal(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 64,
            Failure::Hypothesis { .. } => 2,
            Failure::Internal(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "{e}"),
            Failure::Hypothesis {
                stage,
                hypothesis,
                error,
            } => write!(
                f,
                "hypothesis violated in stage {stage}: {hypothesis} ({error})"
            ),
            Failure::Internal(e) => write!(f, "internal error: {e}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

fn io(e: impl std::fmt::Display) -> Failure {
    Failure::Internal(e.to_string())
}

/// Classifies a library error raised by `stage`.
fn stage_error(stage: &'static str, error: Error) -> Failure {
    match error.violated_hypothesis() {
        Some(hypothesis) => Failure::Hypothesis {
            stage,
            hypothesis,
            error,
        },
        None => Failure::Internal(format!("stage {stage}: {error}")),
    }
}

pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub map: MapSpec,
    tables: Vec<CriticalOrbitTable>,
    binding: Option<(BindingConfig, LevelSets, Omega0Choice)>,
    phat: Option<TailStats>,
    distortion_k: f64,
    q: Option<ReturnMapQ>,
    density: Option<MeasureEstimate>,
}

fn class_json(c: &Result<DecayClass, Error>) -> Value {
    match c {
        Ok(c) => serde_json::to_value(c).unwrap_or(Value::Null),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn class_label(c: &Result<DecayClass, Error>) -> Value {
    match c {
        Ok(c) => json!(c.class.label()),
        Err(_) => json!("inconclusive"),
    }
}

fn tail_label(t: &TailStats) -> Value {
    match &t.class {
        Some(c) => json!(c.class.label()),
        None => json!("inconclusive"),
    }
}

fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    let mut s = serde_json::to_string_pretty(v).map_err(io)?;
    s.push('\n');
    fs::write(path, s).map_err(io)
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn write_tails(path: &Path, t: &TailStats) -> Result<(), Failure> {
    #[derive(Serialize)]
    struct Row {
        n: usize,
        count: usize,
        mass: f64,
    }
    write_csv(
        path,
        (0..=t.n_max).map(|n| Row {
            n,
            count: t.counts[n],
            mass: t.tail[n],
        }),
    )
}

/// Resolves the map, locating the Fibonacci parameter when asked to.
pub fn resolve_map(cfg: &RunConfig, out: &Path) -> Result<MapSpec, Failure> {
    let params = match &cfg.params {
        Params::Values(v) => v.clone(),
        Params::Fibonacci => vec![fibfind(cfg, out)?],
    };
    let map = MapSpec::new(cfg.family, &params)
        .map_err(|e| Failure::Config(ConfigError(e.to_string())))?;
    if (map.critical_order() - cfg.ell).abs() > 1e-9 {
        return Err(Failure::Config(ConfigError(format!(
            "ell = {} does not match the critical order {} of the {} family",
            cfg.ell,
            map.critical_order(),
            cfg.family
        ))));
    }
    Ok(map)
}

/// Locates the Fibonacci parameter and writes `fibonacci.json`.
pub fn fibfind(cfg: &RunConfig, out: &Path) -> Result<f64, Failure> {
    let a = find_fibonacci_parameter(cfg.family, cfg.fib_bracket)
        .map_err(|e| stage_error("fibfind", e))?;
    let m = MapSpec::new(cfg.family, &[a]).map_err(|e| stage_error("fibfind", e))?;
    let expected = fibonacci_times(12);
    let c = m.critical_points()[0];
    let returns = closest_returns(&m, c, expected[11] + 1);
    let times: Vec<usize> = returns.iter().map(|r| r.0).take(12).collect();
    let scaling = fibonacci_scaling_check(&m, 12).map_err(|e| stage_error("fibfind", e))?;
    write_json(
        &out.join("fibonacci.json"),
        &json!({
            "family": cfg.family.id(),
            "parameter": a,
            "closest_return_times": times,
            "fibonacci_times": expected,
            "matches": times == expected,
            "scaling": scaling,
        }),
    )?;
    Ok(a)
}

impl Run {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Result<Run, Failure> {
        fs::create_dir_all(&out).map_err(io)?;
        let map = resolve_map(&cfg, &out)?;
        Ok(Run {
            cfg,
            out,
            map,
            tables: Vec::new(),
            binding: None,
            phat: None,
            distortion_k: f64::NAN,
            q: None,
            density: None,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn run_stage(&mut self, stage: Stage) -> Result<(), Failure> {
        match stage {
            Stage::Analyze => self.analyze(),
            Stage::Induce => self.induce(),
            Stage::ReturnMap => self.returnmap(),
            Stage::Tower => self.tower(),
            Stage::Corr => self.corr(),
            Stage::Clt => self.clt(),
        }
    }

    fn analyze(&mut self) -> Result<(), Failure> {
        let m = &self.map;
        let n = self.cfg.orbit_depth;
        let tables = match self.cfg.gamma {
            GammaChoice::Equalizing => critical_tables(m, n, &GammaStrategy::Equalizing),
            GammaChoice::InverseSqrt(scale) => m
                .critical_points()
                .iter()
                .map(|&c| {
                    let dn = compute_dn_log(m, c, n);
                    let strategy = GammaStrategy::UserSeries {
                        log_gamma: scaled_inverse_sqrt(&dn.log_d, scale),
                    };
                    let mut t = CriticalOrbitTable::from_series(
                        c,
                        m.critical_order(),
                        dn.log_d,
                        dn.dist_to_c,
                        &strategy,
                    )?;
                    t.critical_hit = dn.critical_hit;
                    Ok(t)
                })
                .collect(),
        }
        .map_err(|e| stage_error("analyze", e))?;

        let mut per = Vec::new();
        // the slowest class over the critical points goes to the summary
        let mut worst: Option<(u8, Value, Value, Value)> = None;
        for (i, t) in tables.iter().enumerate() {
            self.write_table(i, t)?;
            let summ = check_summability(t).map_err(|e| stage_error("analyze", e))?;
            let bn = classify_log_growth(&t.log_b, SequenceKind::BSequence);
            let dn = classify_log_growth(&t.log_dn, SequenceKind::DSequence);
            let rank = match summ.star.verdict.label() {
                "converged" => 0,
                "inconclusive" => 1,
                _ => 2,
            };
            if worst.as_ref().is_none_or(|w| rank > w.0) {
                worst = Some((
                    rank,
                    json!(summ.star.verdict.label()),
                    class_label(&bn),
                    class_label(&dn),
                ));
            }
            per.push(json!({
                "c": t.c,
                "star_verdict": summ.star.verdict.label(),
                "starstar_verdict": summ.starstar.label(),
                "summability": summ,
                "critical_hit": t.critical_hit,
                "bn_class": class_label(&bn),
                "dn_class": class_label(&dn),
                "bn_fit": class_json(&bn),
                "dn_fit": class_json(&dn),
                "table": format!("critical_orbit_{i}.csv"),
            }));
        }
        let (_, star, bn, dn) = worst.unwrap_or((0, Value::Null, Value::Null, Value::Null));
        write_json(
            &self.path("analyze.json"),
            &json!({
                "map": m.family().id(),
                "params": m.params(),
                "ell": m.critical_order(),
                "orbit_depth": n,
                "star_verdict": star,
                "bn_class": bn,
                "dn_class": dn,
                "critical_points": per,
            }),
        )?;
        self.tables = tables;
        Ok(())
    }

    fn write_table(&self, i: usize, t: &CriticalOrbitTable) -> Result<(), Failure> {
        #[derive(Serialize)]
        struct Row {
            n: usize,
            #[serde(rename = "logD")]
            log_d: f64,
            gamma: f64,
            b: f64,
            d: Option<f64>,
            #[serde(rename = "dist_to_C")]
            dist_to_c: f64,
        }
        write_csv(
            &self.path(&format!("critical_orbit_{i}.csv")),
            (1..=t.len()).map(|n| Row {
                n,
                log_d: t.log_d[n - 1],
                gamma: t.gamma(n),
                b: t.b(n),
                d: (n >= 2).then(|| t.d(n)),
                dist_to_c: t.dist_to_c[n - 1],
            }),
        )
    }

    fn induce(&mut self) -> Result<(), Failure> {
        let m = &self.map;
        if let Renormalization::Renormalizable { period } =
            renormalization_test(m, RENORMALIZATION_HORIZON)
        {
            return Err(stage_error("induce", Error::Renormalizable { period }));
        }
        let opts = DeltaOptions {
            p_max: self.cfg.p_max,
            epsilon: self.cfg.epsilon,
            ..DeltaOptions::default()
        };
        let cfg = fix_delta(m, &self.tables, &opts).map_err(|e| stage_error("induce", e))?;
        let expansion = estimate_outside_expansion(m, &cfg, OUTSIDE_SAMPLES)
            .map_err(|e| stage_error("induce", e))?;
        let levels = build_level_sets(m, &cfg);
        let choice = choose_omega0(m, 0, &cfg).map_err(|e| stage_error("induce", e))?;

        let w = (cfg.delta_prime / 3.0).min(choice.length());
        let (lo, hi) = support(m);
        let n_max = self.cfg.induce_n_max;
        let parts = (0..NET_SIZE)
            .map(|i| {
                let x = lo + (hi - lo - w) * i as f64 / (NET_SIZE - 1) as f64;
                // the net scale is w itself; shave rounding off the bound
                induce_to_large_scale(m, &cfg, &levels, (x, x + w), n_max, w * (1.0 - 1e-9))
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| stage_error("induce", e))?;
        let tail = tail_of_phat(&parts, n_max).map_err(|e| stage_error("induce", e))?;
        let k = distortion_constant(m, &parts);
        let size = check_size_lemma(&parts[NET_SIZE / 2], &cfg, &levels, &expansion);

        #[derive(Serialize)]
        struct Row {
            piece_lo: f64,
            piece_hi: f64,
            p_hat: usize,
            s: usize,
            itinerary: String,
        }
        let rows = parts.iter().flat_map(|p| {
            p.pieces.iter().map(|q| Row {
                piece_lo: q.lo.hi,
                piece_hi: q.hi.hi,
                p_hat: q.p_hat,
                s: q.entries.len(),
                itinerary: q
                    .entries
                    .iter()
                    .map(|e| format!("{}:{}:{}", e.nu, e.p, e.label.as_str()))
                    .collect::<Vec<_>>()
                    .join(";"),
            })
        });
        write_csv(&self.path("partition.csv"), rows)?;
        write_tails(&self.path("phat_tails.csv"), &tail)?;
        write_json(
            &self.path("induce.json"),
            &json!({
                "delta": cfg.delta,
                "p_delta": cfg.p_delta,
                "delta_prime": cfg.delta_prime,
                "delta_second": w,
                "epsilon": cfg.epsilon,
                "rho": cfg.rho,
                "kappa": cfg.kappa,
                "tau": cfg.tau,
                "big_gamma": cfg.big_gamma,
                "outside_expansion": expansion,
                "omega0": [choice.omega0.0, choice.omega0.1],
                "t0": choice.t0,
                "n_max": n_max,
                "net": parts.iter().map(|p| json!({
                    "j": [p.j.0, p.j.1],
                    "pieces": p.pieces.len(),
                    "unresolved_mass": p.unresolved_mass,
                })).collect::<Vec<_>>(),
                "phat_tail": tail_label(&tail),
                "phat_fit": tail.class,
                "phat_censored": tail.censored,
                "distortion_k": k,
                "size_lemma_pass_rate": size.pass_rate(),
                "tails_file": "phat_tails.csv",
            }),
        )?;
        self.distortion_k = k.k;
        self.phat = Some(tail);
        self.binding = Some((cfg, levels, choice));
        Ok(())
    }

    fn returnmap(&mut self) -> Result<(), Failure> {
        let m = &self.map;
        let (cfg, levels, choice) = self.binding.as_ref().expect("induce runs first");
        let q = build_return_map_with_budget(
            m,
            cfg,
            levels,
            choice,
            self.cfg.returnmap_n_max,
            self.cfg.returnmap_budget,
        )
        .map_err(|e| stage_error("returnmap", e))?;
        let markov = verify_markov(m, &q);
        let tail = tail_of_r(&q);
        let holder = match check_holder_distortion(m, &q, self.cfg.holder_pairs, HOLDER_SLACK) {
            Ok(h) => serde_json::to_value(h).unwrap_or(Value::Null),
            Err(e) => json!({ "error": e.to_string() }),
        };
        let conditional = self.phat.as_ref().map(|p| {
            conditional_tail_check(&q, p, self.distortion_k, cfg.delta_prime, CONDITIONAL_SLACK)
        });

        #[derive(Serialize)]
        struct Row {
            omega_lo: f64,
            omega_hi: f64,
            #[serde(rename = "R")]
            r: usize,
            s: usize,
            t: usize,
        }
        write_csv(
            &self.path("q.csv"),
            q.pieces.iter().map(|p| Row {
                omega_lo: p.lo.hi,
                omega_hi: p.hi.hi,
                r: p.r,
                s: p.s(),
                t: p.t,
            }),
        )?;
        write_tails(&self.path("r_tails.csv"), &tail)?;
        write_json(
            &self.path("returnmap.json"),
            &json!({
                "omega0": [q.omega0.0, q.omega0.1],
                "omega0_length": q.omega0_length(),
                "t0": q.t0,
                "n_max": q.n_max,
                "budget": self.cfg.returnmap_budget,
                "pieces": q.pieces.len(),
                "resolved_fraction": q.resolved_mass() / q.omega0_length(),
                "censored_mass": tail.censored,
                "markov_max_mismatch": markov.max_mismatch,
                "markov_flagged": markov.flagged.len(),
                "additivity_failures": markov.additivity_failures,
                "R_tail": tail_label(&tail),
                "R_fit": tail.class,
                "xi_by_depth": q.depths.iter().map(|d| d.xi()).collect::<Vec<_>>(),
                "holder": holder,
                "conditional_tail": conditional.map(|c| json!({
                    "worst_ratio": c.worst_ratio,
                    "slack": c.slack,
                    "holds_to_depth_3": c.holds(3),
                })),
                "tails_file": "r_tails.csv",
            }),
        )?;
        self.q = Some(q);
        Ok(())
    }

    fn tower(&mut self) -> Result<(), Failure> {
        let q = self.q.as_ref().expect("returnmap runs first");
        let (kac, tower) = match build_tower(q) {
            Ok(t) => (json!({ "status": "finite" }), t),
            Err(Error::KacDivergence { correction, total }) => (
                json!({ "status": "kac-divergence", "correction": correction, "total": total }),
                assemble_tower(q),
            ),
            Err(e) => return Err(stage_error("tower", e)),
        };
        let identity = tower_tail_identity(q);
        let comm = check_commutation(&self.map, &tower, COMMUTATION_SAMPLES);
        write_json(
            &self.path("tower.json"),
            &json!({
                "kac": kac,
                "total_mass": tower.total_mass,
                "censored_correction": tower.censored_correction,
                "levels": tower.levels(),
                "tail_identity_holds": identity.holds(),
                "tail_identity_first_mismatch": identity.first_mismatch,
                "commutation": comm,
            }),
        )
    }

    fn density(&mut self) -> Result<&MeasureEstimate, Failure> {
        if self.density.is_none() {
            let mu = invariant_density(
                &self.map,
                DensityMethod::BirkhoffHistogram,
                None,
                self.cfg.density_samples,
                self.cfg.seed,
            )
            .map_err(|e| stage_error("density", e))?;
            #[derive(Serialize)]
            struct Row {
                x_lo: f64,
                x_hi: f64,
                density: f64,
            }
            let (nlo, nhi) = self.map.natural_domain();
            let width = nhi - nlo;
            write_csv(
                &self.path("density.csv"),
                (0..mu.bins()).map(|i| {
                    let (a, b) = mu.bin_edges(i);
                    Row {
                        x_lo: self.map.to_natural(a),
                        x_hi: self.map.to_natural(b),
                        density: mu.density[i] / width,
                    }
                }),
            )?;
            write_json(
                &self.path("density.json"),
                &json!({
                    "method": mu.method,
                    "bins": mu.bins(),
                    "n_samples": mu.n_samples,
                    "seed": mu.seed,
                    "seed_distance": mu.seed_distance,
                    "invariance_defect": mu.invariance_defect,
                    "integral": mu.integral(),
                }),
            )?;
            self.density = Some(mu);
        }
        Ok(self.density.as_ref().expect("just set"))
    }

    fn corr(&mut self) -> Result<(), Failure> {
        self.density()?;
        let mu = self.density.as_ref().expect("density computed");
        let c = &self.cfg;
        let curve = correlation(
            &self.map,
            mu,
            &c.corr_phi,
            &c.corr_psi,
            c.corr_n_max,
            c.corr_samples,
            c.seed,
        )
        .map_err(|e| stage_error("corr", e))?;
        let (label, fit) = match fit_correlation_decay(&curve) {
            Ok(d) => (
                json!(d.class.label()),
                serde_json::to_value(d).unwrap_or(Value::Null),
            ),
            Err(Error::AllCensored { n }) => {
                (json!(">= exponential"), json!({ "all_censored_at": n }))
            }
            Err(e) => (json!("inconclusive"), json!({ "error": e.to_string() })),
        };
        let beta = fit.get("beta").cloned().unwrap_or(Value::Null);
        let alpha = fit.get("alpha").cloned().unwrap_or(Value::Null);
        #[derive(Serialize)]
        struct Row {
            n: usize,
            value: f64,
            standard_error: f64,
            censored: bool,
        }
        write_csv(
            &self.path("corr.csv"),
            (0..curve.values.len()).map(|n| Row {
                n,
                value: curve.values[n],
                standard_error: curve.standard_errors[n],
                censored: curve.censored[n],
            }),
        )?;
        write_json(
            &self.path("corr.json"),
            &json!({
                "phi": curve.phi,
                "psi": curve.psi,
                "n_samples": curve.n_samples,
                "seed": curve.seed,
                "corr_class": label,
                "beta": beta,
                "alpha": alpha,
                "fit": fit,
                "curve_file": "corr.csv",
            }),
        )
    }

    fn clt(&mut self) -> Result<(), Failure> {
        self.density()?;
        let mu = self.density.as_ref().expect("density computed");
        let c = &self.cfg;
        let v = match clt_test(
            &self.map,
            mu,
            &c.clt_phi,
            c.clt_n_block,
            c.clt_n_trials,
            c.seed,
        ) {
            Ok(r) => json!({
                "status": if r.pass { "pass" } else { "fail" },
                "sigma": r.sigma,
                "ks": r.ks,
                "report": r,
            }),
            Err(Error::CoboundarySuspected { sigma }) => json!({
                "status": "coboundary-suspected",
                "sigma": sigma,
                "ks": null,
            }),
            Err(e) => return Err(stage_error("clt", e)),
        };
        write_json(&self.path("clt.json"), &v)
    }
}
