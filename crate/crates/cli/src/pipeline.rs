//! The stages behind the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use num::complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use turnpoint::asymptotics::{
    gevrey_report, outer_overlap_single_valued, overlap_study_on, write_fits_csv, write_samples_csv, Family,
    GevreyReport, LadderChoice, OverlapFits, OverlapStudy,
};
use turnpoint::config::{Loaded, RunConfig};
use turnpoint::geometry::{scaling_gap, time_domains_disjoint, ScalingGap};
use turnpoint::inner::{fnorm, inner_pde_residual, solve_inner};
use turnpoint::model::{check_smallness, cpow_rat, validate_inner, validate_outer, EquationSpec};
use turnpoint::outer::{enorm, ode_residual_f, outer_pde_residual, solve_outer};
use turnpoint::turning::{admissible_mu_window, merging_exponent, roots_p, rouche_count};

type C64 = Complex64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("constraint check failed: {0}")]
    Constraint(String),
    #[error("pipeline order error: stage `{missing}` must complete before `{stage}`")]
    Order { stage: &'static str, missing: &'static str },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Constraint(_) => 1,
            CliError::Input(_) => 2,
            CliError::Order { .. } => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<turnpoint::Error> for CliError {
    fn from(e: turnpoint::Error) -> Self {
        use turnpoint::Error as E;
        match e {
            E::Parse(_) | E::Io(_) | E::Json(_) | E::Csv(_) | E::Structural(_) => CliError::Input(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Validate,
    Roots,
    SolveInner,
    SolveOuter,
    Flatness,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::Validate, Stage::Roots, Stage::SolveInner, Stage::SolveOuter, Stage::Flatness, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Roots => "roots",
            Stage::SolveInner => "solve-inner",
            Stage::SolveOuter => "solve-outer",
            Stage::Flatness => "flatness",
            Stage::Report => "report",
        }
    }

    fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Validate | Stage::Roots => &[],
            Stage::SolveInner | Stage::SolveOuter => &[Stage::Validate],
            Stage::Flatness => &[Stage::SolveInner, Stage::SolveOuter],
            Stage::Report => &[Stage::Flatness],
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Marker {
    stage: String,
    hash: String,
}

/// A loaded configuration and its artifact directory.
pub struct Context {
    pub loaded: Loaded,
    pub hash: String,
    pub root: PathBuf,
    eps: Option<Vec<f64>>,
}

/// Sets `key.path=value`; the value keeps the JSON type of the field it
/// replaces (strings stay strings, so rationals can be overridden as `5`).
fn apply_override(root: &mut Value, kv: &str) -> Result<(), CliError> {
    let (key, raw) = kv.split_once('=').ok_or_else(|| CliError::Input(format!("override `{kv}` is not KEY=VALUE")))?;
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Input(format!("override `{key}`: `{part}` is not inside an object")))?;
        if i + 1 == parts.len() {
            let value = match obj.get(*part) {
                Some(Value::String(_)) => Value::String(raw.to_string()),
                _ => serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string())),
            };
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(CliError::Input(format!("override `{kv}` has an empty key")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn c2(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

impl Context {
    pub fn load(config: &Path, overrides: &[String], eps: Option<Vec<f64>>, out: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(config)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", config.display())))?;
        let mut root: Value = serde_json::from_str(&text)?;
        for kv in overrides {
            apply_override(&mut root, kv)?;
        }
        let cfg: RunConfig = serde_json::from_value(root.clone())?;
        let spec_path = config.parent().unwrap_or(Path::new(".")).join(&cfg.spec);
        let spec = EquationSpec::load(&spec_path)?;
        if let Some(list) = &eps {
            if list.is_empty() || list.iter().any(|e| !(*e > 0.0)) {
                return Err(CliError::Input("--eps needs positive moduli".into()));
            }
        }
        // serde_json maps are ordered, so the serialisation is canonical.
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&root)?.as_bytes());
        h.update(b"\n");
        h.update(spec.to_json_string()?.as_bytes());
        h.update(b"\n");
        h.update(env!("CARGO_PKG_VERSION").as_bytes());
        let hash = format!("{:x}", h.finalize())[..16].to_string();
        let loaded = Loaded::new(cfg, spec, spec_path);
        Ok(Context { root: out.join(&hash), loaded, hash, eps })
    }

    fn dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.name())
    }

    fn done(&self, stage: Stage) -> bool {
        let path = self.dir(stage).join("stage.json");
        fs::read_to_string(path)
            .ok()
            .and_then(|s| serde_json::from_str::<Marker>(&s).ok())
            .is_some_and(|m| m.hash == self.hash && m.stage == stage.name())
    }

    fn finish(&self, stage: Stage) -> Result<(), CliError> {
        write_json(&self.dir(stage).join("stage.json"), &Marker { stage: stage.name().into(), hash: self.hash.clone() })
    }

    pub fn run(&self, stage: Stage) -> Result<(), CliError> {
        for &pre in stage.prerequisites() {
            if !self.done(pre) {
                return Err(CliError::Order { stage: stage.name(), missing: pre.name() });
            }
        }
        let dir = self.dir(stage);
        let _ = fs::remove_file(dir.join("stage.json"));
        fs::create_dir_all(&dir)?;
        match stage {
            Stage::Validate => self.validate(&dir)?,
            Stage::Roots => self.roots(&dir)?,
            Stage::SolveInner => self.solve(&dir, Family::Inner)?,
            Stage::SolveOuter => self.solve(&dir, Family::Outer)?,
            Stage::Flatness => self.flatness(&dir)?,
            Stage::Report => self.report(&dir)?,
        }
        self.finish(stage)
    }

    fn validate(&self, dir: &Path) -> Result<(), CliError> {
        let ld = &self.loaded;
        let inner = validate_inner(&ld.spec, &ld.params)?;
        let outer = validate_outer(&ld.spec, &ld.params)?;
        let small = check_smallness(&ld.spec, ld.config.zeta1);
        write_json(&dir.join("inner_report.json"), &inner)?;
        write_json(&dir.join("outer_report.json"), &outer)?;
        write_json(&dir.join("smallness_report.json"), &small)?;
        println!(
            "validate: inner {}, outer {}, smallness {}",
            verdict(inner.overall),
            verdict(outer.overall),
            verdict(small.overall)
        );
        let failed: Vec<String> = [&inner, &outer, &small]
            .iter()
            .flat_map(|r| r.failures().into_iter().map(|e| e.id.clone()))
            .collect();
        if !failed.is_empty() {
            return Err(CliError::Constraint(failed.join(", ")));
        }
        Ok(())
    }

    fn roots(&self, dir: &Path) -> Result<(), CliError> {
        let spec = &self.loaded.spec;
        let eps_seq: Vec<f64> = (0..17).map(|i| 10f64.powf(-1.0 - 0.25 * i as f64)).collect();
        let mut csv = String::from("eps,index,re,im,abs\n");
        for &e in &eps_seq {
            let mut roots = roots_p(C64::new(e, 0.0), spec)?;
            roots.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap().then(a.arg().partial_cmp(&b.arg()).unwrap()));
            for (i, r) in roots.iter().enumerate() {
                csv.push_str(&format!("{e:.6e},{i},{:.12e},{:.12e},{:.12e}\n", r.re, r.im, r.norm()));
            }
        }
        fs::write(dir.join("root_locus.csv"), csv)?;
        let exponent = merging_exponent(spec, &eps_seq)?;
        let window = admissible_mu_window(spec);
        let mu = 0.5 * window;
        let rouche_eps = 1e-3;
        let count = rouche_count(C64::new(rouche_eps, 0.0), mu, spec)?;
        #[derive(Serialize)]
        struct Summary {
            merging_exponent: f64,
            mu_window: f64,
            mu: f64,
            rouche_eps: f64,
            rouche_count: i64,
        }
        write_json(
            &dir.join("roots.json"),
            &Summary { merging_exponent: exponent, mu_window: window, mu, rouche_eps, rouche_count: count },
        )?;
        println!("roots: merging exponent {exponent:.4}, {count} roots in D(0, ε^{mu:.3}) at ε = {rouche_eps}");
        Ok(())
    }

    fn solve(&self, dir: &Path, family: Family) -> Result<(), CliError> {
        let ld = &self.loaded;
        let p = &ld.params;
        let (fam, radius) = match family {
            Family::Inner => (ld.inner_family()?, p.eps0),
            Family::Outer => (ld.outer_family()?, p.eps0_outer),
        };
        let moduli = self.eps.clone().unwrap_or_else(|| vec![radius / 4.0, radius / 6.0, radius / 8.0]);
        let arg = fam.covering.sectors[0].bisector;
        let z = C64::new(0.3, 0.1);
        let records: Vec<SolveRecord> = moduli
            .par_iter()
            .enumerate()
            .map(|(k, &m)| -> Result<SolveRecord, CliError> {
                let eps = C64::from_polar(m, arg);
                let (fp, norm, pde, ode) = match family {
                    Family::Inner => {
                        let run = ld.inner_run(&fam, 0, eps)?;
                        let fp = solve_inner(eps, &ld.spec, p, &run)?;
                        let scale = cpow_rat(eps, p.chi - p.alpha);
                        let rho_x = ld.rho_x();
                        let pde = (0..5)
                            .map(|i| {
                                let x = C64::from_polar(rho_x * (0.2 + 0.15 * i as f64), ld.config.inner.x_bisector);
                                let t = x * scale;
                                Ok(PdePoint { t: c2(t), z: c2(z), residual: inner_pde_residual(t, z, &fp, &ld.spec)? })
                            })
                            .collect::<Result<Vec<_>, turnpoint::Error>>()?;
                        let norm = fnorm(&fp.solution, eps);
                        (fp, norm, pde, Vec::new())
                    }
                    Family::Outer => {
                        let run = ld.outer_run(&fam, 0, eps, fam.x_bisector)?;
                        let fp = solve_outer(eps, &ld.spec, p, &run)?;
                        let bound = fam.delta_nu * m.powf(p.gamma_f() - p.big_gamma_f());
                        let pde = [1.5, 2.0, 3.0, 5.0, 10.0]
                            .iter()
                            .map(|f| {
                                let t = C64::from_polar(f * bound, fam.x_bisector);
                                Ok(PdePoint {
                                    t: c2(t),
                                    z: c2(z),
                                    residual: outer_pde_residual(t, z, &fp, &ld.spec, fam.delta_nu)?,
                                })
                            })
                            .collect::<Result<Vec<_>, turnpoint::Error>>()?;
                        // Small-disc regime |t| < K_F|ε|^γ of the forcing.
                        let line = fp.solution.line();
                        let rad = 0.5 * ld.spec.forcing.k_f * m.powf(p.gamma_f());
                        let ode = (0..5)
                            .map(|i| {
                                let t = C64::from_polar(rad, 0.4 * (i as f64 - 2.0));
                                Ok(PdePoint { t: c2(t), z: c2(z), residual: ode_residual_f(t, z, eps, &ld.spec, &line)? })
                            })
                            .collect::<Result<Vec<_>, turnpoint::Error>>()?;
                        let norm = enorm(&fp.solution, eps);
                        (fp, norm, pde, ode)
                    }
                };
                let artifact = format!("eps_{k}.fp");
                let mut file = std::io::BufWriter::new(fs::File::create(dir.join(&artifact))?);
                fp.write(&mut file)?;
                Ok(SolveRecord {
                    eps: c2(eps),
                    direction: fp.solution.direction,
                    iterations: fp.iterations,
                    contraction_ratios: fp.contraction_ratios.clone(),
                    residual_norm: fp.residual_norm,
                    solution_norm: norm,
                    relative_residual: fp.residual_norm / norm,
                    pde,
                    forcing_ode: ode,
                    artifact,
                })
            })
            .collect::<Result<_, _>>()?;
        write_json(&dir.join("summary.json"), &records)?;
        let worst = records.iter().flat_map(|r| r.pde.iter().map(|q| q.residual)).fold(0.0, f64::max);
        let ratio = records.iter().flat_map(|r| r.contraction_ratios.iter().copied()).fold(0.0, f64::max);
        println!(
            "{}: {} solves, max contraction ratio {ratio:.3e}, max PDE residual {worst:.3e}",
            if family == Family::Inner { "solve-inner" } else { "solve-outer" },
            records.len()
        );
        Ok(())
    }

    fn flatness(&self, dir: &Path) -> Result<(), CliError> {
        let ld = &self.loaded;
        let ladder = match &self.eps {
            Some(m) => LadderChoice::Moduli(m.clone()),
            None => LadderChoice::Auto(6),
        };
        let inner_fam = ld.inner_family()?;
        let outer_fam = ld.outer_family()?;
        let outer_overlap = (0..outer_fam.covering.len())
            .find(|&j| outer_overlap_single_valued(&outer_fam, j))
            .ok_or_else(|| CliError::Numerical("no outer overlap with a single branch of ε-powers".into()))?;
        let studies = vec![
            overlap_study_on(ld, &inner_fam, Family::Inner, 0, ladder.clone())?,
            overlap_study_on(ld, &outer_fam, Family::Outer, outer_overlap, ladder)?,
        ];
        write_samples_csv(&studies, fs::File::create(dir.join("cocycles.csv"))?)?;
        write_fits_csv(&studies, fs::File::create(dir.join("fits.csv"))?)?;
        write_json(&dir.join("studies.json"), &studies)?;
        for s in &studies {
            let at = s.fit_at(s.order).expect("ladder contains the theoretical order");
            println!(
                "flatness: {:?} overlap {}: order {} slope {:.4e} r² {:.6}",
                s.family, s.overlap, s.order, at.slope, at.r2
            );
        }
        Ok(())
    }

    fn report(&self, dir: &Path) -> Result<(), CliError> {
        let ld = &self.loaded;
        let text = fs::read_to_string(self.dir(Stage::Flatness).join("studies.json"))?;
        let studies: Vec<OverlapStudy> = serde_json::from_str(&text)?;
        let fits = |f: Family| -> Vec<OverlapFits> { studies.iter().filter(|s| s.family == f).map(OverlapFits::from).collect() };
        let gevrey = gevrey_report(&fits(Family::Inner), &fits(Family::Outer), &ld.params);
        let outer_fam = ld.outer_family()?;
        let rho_x = ld.rho_x();
        let gap = scaling_gap(&ld.params, rho_x, outer_fam.delta_nu)?;
        let samples: Vec<(f64, bool)> = (0..20)
            .map(|i| {
                let e = 0.95 * gap.eps_threshold * 10f64.powf(-3.0 * i as f64 / 19.0);
                (e, time_domains_disjoint(&ld.params, rho_x, outer_fam.delta_nu, e))
            })
            .collect();
        let disjoint = samples.iter().all(|(_, d)| *d);
        let bounded: Vec<(Family, usize, bool)> = studies.iter().map(|s| (s.family, s.overlap, s.bounded())).collect();
        let ok = gevrey.ok && disjoint && bounded.iter().all(|b| b.2);
        let summary = Report { gevrey, scaling_gap: gap, gap_samples: samples, time_domains_disjoint: disjoint, bounded, ok };
        write_json(&dir.join("gevrey_report.json"), &summary)?;
        println!(
            "report: inner order {} ({}), outer order {} ({}), distinct {}, scaling margin {}, disjoint {}",
            summary.gevrey.inner.expected_order,
            verdict(summary.gevrey.inner.ok),
            summary.gevrey.outer.expected_order,
            verdict(summary.gevrey.outer.ok),
            summary.gevrey.orders_distinct,
            summary.scaling_gap.margin_exact,
            disjoint
        );
        if !ok {
            return Err(CliError::Constraint("Gevrey-order, boundedness or scaling-gap assertion failed".into()));
        }
        Ok(())
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

#[derive(Serialize)]
struct PdePoint {
    t: [f64; 2],
    z: [f64; 2],
    residual: f64,
}

#[derive(Serialize)]
struct SolveRecord {
    eps: [f64; 2],
    direction: f64,
    iterations: usize,
    contraction_ratios: Vec<f64>,
    residual_norm: f64,
    solution_norm: f64,
    relative_residual: f64,
    pde: Vec<PdePoint>,
    forcing_ode: Vec<PdePoint>,
    artifact: String,
}

#[derive(Serialize)]
struct Report {
    gevrey: GevreyReport,
    scaling_gap: ScalingGap,
    gap_samples: Vec<(f64, bool)>,
    time_domains_disjoint: bool,
    bounded: Vec<(Family, usize, bool)>,
    ok: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_keeps_string_fields_as_strings() {
        let mut v: Value = serde_json::from_str(r#"{"params": {"chi": "6", "nu": 2.0}}"#).unwrap();
        apply_override(&mut v, "params.chi=5").unwrap();
        apply_override(&mut v, "params.nu=3.5").unwrap();
        assert_eq!(v["params"]["chi"], Value::String("5".into()));
        assert_eq!(v["params"]["nu"], serde_json::json!(3.5));
        assert!(apply_override(&mut v, "params").is_err());
    }
}
