use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use starflow::cocycle::{build_chain, CocycleChain};
use starflow::flow::{integrate, IntegrateOptions, OrbitSegment, SharedSystem, ALPHA_MIN};
use starflow::io::{read_orbit_cache, write_chain_cache, write_chain_csv, write_measure_csv, write_orbit_cache, write_orbit_csv};
use starflow::measures::{
    birkhoff_check, continuity_diagnostics, default_basis, dm_distance, empirical_measure, loop_measure, BirkhoffOptions,
    BirkhoffReport, ContinuityDiagnostics, DmReport,
};
use starflow::shadow::{
    close_up, find_close_returns, independent_residual, recent_return, verify_shadowing, CloseUpOptions, PeriodicOrbitSummary,
    ReturnSearch,
};
use starflow::spectrum::{
    compare_splittings, oseledec_splitting, qr_exponents, scaled_equals_unscaled_check, tangent_exponents,
    DominationCertificate, ScalingIdentityReport, SpectrumEstimate, SplittingAgreement, SplittingEstimate, SplittingOptions,
};
use starflow::strings::{
    block_constants, block_derivation, member_flags, membership_fraction, pliss_select, BlockDerivation, LogProfile,
    Margins, PesinBlockParams, QuasiHyperbolicSegment,
};

use crate::artifacts::RunDir;
use crate::config::PipelineConfig;
use crate::error::CliError;

pub const ORBIT_BIN: &str = "orbit.bin";
pub const ORBIT_CSV: &str = "orbit.csv";
pub const SIMULATE_JSON: &str = "simulate.json";
pub const CHAIN_BIN: &str = "chain.bin";
pub const CHAIN_CSV: &str = "chain.csv";
pub const SPECTRUM_JSON: &str = "spectrum.json";
pub const SPECTRUM_LOG: &str = "spectrum.log";
pub const STRINGS_JSON: &str = "strings.json";
pub const STRINGS_LOG: &str = "strings.log";
pub const MARGINS_CSV: &str = "margins.csv";
pub const CLOSE_JSON: &str = "close.json";
pub const CLOSE_LOG: &str = "close.log";
pub const COMPARE_JSON: &str = "compare.json";
pub const COMPARE_LOG: &str = "compare.log";
pub const EMPIRICAL_CSV: &str = "measures/empirical.csv";

/// Tolerance of the independent RK4 residual check.
const INDEPENDENT_TOL: f64 = 1e-12;
/// Longest segments listed in strings.json (all of them go to margins.csv).
const LISTED_SEGMENTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Spectrum,
    Strings,
    Close,
    Compare,
    Plots,
    Run,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Spectrum => "spectrum",
            Stage::Strings => "strings",
            Stage::Close => "close",
            Stage::Compare => "compare",
            Stage::Plots => "plots",
            Stage::Run => "run",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub system: String,
    pub dim: usize,
    pub seed_state: Vec<f64>,
    pub warmup: f64,
    pub window: f64,
    pub stride: f64,
    pub tol: f64,
    pub samples: usize,
    pub start_state: Vec<f64>,
    pub min_speed: f64,
    pub max_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittingSummary {
    pub index: usize,
    pub gap: f64,
    pub converged_from: usize,
    pub converged_to: usize,
    pub theta_min: f64,
    pub invariance_defect: f64,
    pub domination: DominationCertificate,
    pub agreement: SplittingAgreement,
    pub agreement_horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// 1: every ψ* exponent negative (attracting periodic orbit);
    /// 2: exponents of both signs (string and shadowing path).
    pub case: u8,
    pub scaled: SpectrumEstimate,
    pub unscaled: SpectrumEstimate,
    pub tangent: SpectrumEstimate,
    pub tangent_without_zero: Vec<f64>,
    pub identity: ScalingIdentityReport,
    pub splitting: Option<SplittingSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub start_t: f64,
    pub end_t: f64,
    pub duration: f64,
    pub margins: Margins,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipPoint {
    pub c: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StringsReport {
    pub case: u8,
    pub skipped: bool,
    pub pliss_eta: Option<f64>,
    pub t_gap: f64,
    pub segment_count: usize,
    pub longest_segment: f64,
    pub longest: Vec<SegmentRecord>,
    pub derivation: Option<BlockDerivation>,
    /// Base-block membership fraction at C, 2C and 4C.
    pub membership: Vec<MembershipPoint>,
    pub membership_nondecreasing: bool,
    pub members: usize,
    pub samples: usize,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowingSummary {
    pub theta_prime_bounds: (f64, f64),
    pub scaled_dist_max: f64,
    pub epsilon_used: f64,
    pub monotone: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub gap: f64,
    pub l: usize,
    pub start_index: usize,
    pub end_index: usize,
    pub start_t: f64,
    pub end_t: f64,
    pub duration: f64,
    pub accepted: bool,
    pub reason: String,
    pub orbit: Option<PeriodicOrbitSummary>,
    pub independent_residual: Option<f64>,
    pub shadowing: Option<ShadowingSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// Returns with gap in [d_lo, d_hi).
    pub d_hi: f64,
    pub d_lo: f64,
    pub returns: usize,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloseReport {
    pub case: u8,
    pub buckets: Vec<Bucket>,
    pub accepted: Vec<String>,
    /// Largest gap among candidates whose close-up converged.
    pub largest_converged_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub id: String,
    pub bucket: usize,
    pub d_hi: f64,
    pub gap: f64,
    pub period: f64,
    pub dm: DmReport,
    pub upper: f64,
    /// Truncated d_M between the time average of the guess segment and the
    /// periodic measure: the shadowing part of the estimate alone.
    pub dm_segment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketBest {
    pub d_hi: f64,
    pub d_lo: f64,
    pub id: Option<String>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub n: usize,
    pub epsilon: f64,
    pub tail_bound: f64,
    pub comparisons: Vec<Comparison>,
    pub best_per_bucket: Vec<BucketBest>,
    /// Best dm value nonincreasing along the schedule (as D shrinks), over
    /// nonempty buckets.
    pub nonincreasing: bool,
    /// The opposite reading: best dm nonincreasing as D grows.
    pub nonincreasing_in_d: bool,
    pub best: Option<Comparison>,
    pub success: bool,
    pub birkhoff: BirkhoffReport,
    pub continuity: ContinuityDiagnostics,
}

/// Result of a stage that decides the exit status.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub success: bool,
    pub summary: String,
}

struct Analysis {
    chain: CocycleChain,
    scaled: SpectrumEstimate,
    split: Option<SplittingEstimate>,
}

struct StringsState {
    profile: LogProfile,
    segments: Vec<QuasiHyperbolicSegment>,
    flags: Vec<bool>,
    params: PesinBlockParams,
}

/// One pipeline invocation: configuration, output directory and whatever
/// intermediate objects earlier stages of the same invocation produced.
/// Later stages run on their own reload caches and recompute the rest,
/// which is deterministic.
pub struct Session {
    cfg: PipelineConfig,
    system: SharedSystem,
    run: RunDir,
    orbit: Option<OrbitSegment>,
    analysis: Option<Analysis>,
    strings: Option<StringsState>,
    started: Instant,
    pub verbose: bool,
}

fn fail(stage: &'static str) -> impl Fn(&dyn std::fmt::Display) -> CliError {
    move |e| CliError::stage(stage, e)
}

impl Session {
    pub fn new(cfg: PipelineConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let system = cfg.build_system()?;
        let run = RunDir::create(&cfg.out)?;
        Ok(Session { cfg, system, run, orbit: None, analysis: None, strings: None, started: Instant::now(), verbose: false })
    }

    pub fn run_dir(&self) -> &RunDir {
        &self.run
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn progress(&self, stage: Stage, msg: &str) {
        if self.verbose {
            eprintln!("[{:>8.1}s] {}: {msg}", self.started.elapsed().as_secs_f64(), stage.name());
        }
    }

    /// Runs one stage (or all of them for `Run`) and refreshes the manifest.
    /// `Some` carries the exit decision of compare and run.
    pub fn execute(&mut self, stage: Stage) -> Result<Option<Outcome>, CliError> {
        let outcome = match stage {
            Stage::Simulate => self.simulate().map(|_| None),
            Stage::Spectrum => self.spectrum().map(|_| None),
            Stage::Strings => self.strings_stage().map(|_| None),
            Stage::Close => self.close().map(|_| None),
            Stage::Compare => self.compare().map(Some),
            Stage::Plots => crate::plots::emit_plots(&self.run, &self.system).map(|_| None),
            Stage::Run => {
                for s in [Stage::Simulate, Stage::Spectrum, Stage::Strings, Stage::Close] {
                    self.execute(s)?;
                }
                let outcome = self.compare()?;
                crate::plots::emit_plots(&self.run, &self.system)?;
                Ok(Some(outcome))
            }
        }?;
        self.run.write_manifest()?;
        Ok(outcome)
    }

    // ---- stage 1: orbit ------------------------------------------------

    pub fn simulate(&mut self) -> Result<SimulateReport, CliError> {
        let f = fail("simulate");
        let o = &self.cfg.orbit;
        let opts = IntegrateOptions::uniform(o.tol, o.stride);
        let start: Vec<f64> = if o.warmup > 0.0 {
            integrate(&self.system, &o.seed_state, o.warmup, &opts).map_err(|e| f(&e))?.last().as_slice().to_vec()
        } else {
            o.seed_state.clone()
        };
        let orbit = integrate(&self.system, &start, o.window, &opts).map_err(|e| f(&e))?;
        orbit.check_regular(ALPHA_MIN).map_err(|e| f(&e))?;
        write_orbit_cache(&self.run.path(ORBIT_BIN), &orbit).map_err(|e| f(&e))?;
        write_orbit_csv(&self.run.path(ORBIT_CSV), &orbit).map_err(|e| f(&e))?;
        let report = SimulateReport {
            system: self.system.name().to_string(),
            dim: self.system.dim(),
            seed_state: o.seed_state.clone(),
            warmup: o.warmup,
            window: o.window,
            stride: o.stride,
            tol: o.tol,
            samples: orbit.len(),
            start_state: start,
            min_speed: orbit.min_speed(),
            max_speed: orbit.speeds.iter().copied().fold(0.0, f64::max),
        };
        self.run.write_json(SIMULATE_JSON, &report)?;
        self.progress(Stage::Simulate, &format!("{} samples over {} time units", orbit.len(), o.window));
        self.orbit = Some(orbit);
        self.analysis = None;
        self.strings = None;
        Ok(report)
    }

    fn orbit(&mut self) -> Result<&OrbitSegment, CliError> {
        if self.orbit.is_none() {
            let p = self.run.require(ORBIT_BIN, "simulate")?;
            let orbit = read_orbit_cache(&p, self.system.clone()).map_err(|e| CliError::stage("simulate", e))?;
            self.orbit = Some(orbit);
        }
        Ok(self.orbit.as_ref().expect("loaded"))
    }

    // ---- stage 2: cocycle, spectrum, splitting ---------------------------

    fn analysis(&mut self) -> Result<&Analysis, CliError> {
        if self.analysis.is_none() {
            let f = fail("spectrum");
            let min_gap = self.cfg.spectrum.min_gap;
            let orbit = self.orbit()?;
            let chain = build_chain(orbit, true, ALPHA_MIN).map_err(|e| f(&e))?;
            let scaled = qr_exponents(&chain).map_err(|e| f(&e))?;
            if scaled.gap() < min_gap {
                return Err(f(&format!("spectral gap {} below {min_gap}: not numerically hyperbolic", scaled.gap())));
            }
            let negative = scaled.count_negative();
            if negative == 0 {
                return Err(f(&"every exponent is positive: no attracting or saddle-type measure to approximate"));
            }
            let split = if negative == scaled.exponents.len() {
                None
            } else {
                let opts = SplittingOptions { min_gap, ..Default::default() };
                Some(oseledec_splitting(&chain, negative, &opts).map_err(|e| f(&e))?)
            };
            self.analysis = Some(Analysis { chain, scaled, split });
        }
        Ok(self.analysis.as_ref().expect("computed"))
    }

    pub fn spectrum(&mut self) -> Result<SpectrumReport, CliError> {
        let f = fail("spectrum");
        let orbit = self.orbit()?.clone();
        let horizon = self.cfg.spectrum.agreement_horizon;
        let tolerance = self.cfg.spectrum.agreement_tolerance;
        self.analysis()?;
        let a = self.analysis.as_ref().expect("computed");
        let unscaled = qr_exponents(&a.chain.with_scaling(false)).map_err(|e| f(&e))?;
        let identity = scaled_equals_unscaled_check(&unscaled, &a.scaled, orbit.speeds[0], *orbit.speeds.last().expect("samples"));
        let tangent = tangent_exponents(&orbit).map_err(|e| f(&e))?;
        let splitting = a.split.as_ref().map(|split| {
            let (lo, hi) = split.converged_range().unwrap_or((0, 0));
            SplittingSummary {
                index: split.index,
                gap: split.gap,
                converged_from: lo,
                converged_to: hi,
                theta_min: split.theta_min,
                invariance_defect: split.invariance_defect,
                domination: split.domination,
                agreement: compare_splittings(split, &a.chain, horizon, tolerance, 10.0 * ALPHA_MIN),
                agreement_horizon: horizon,
            }
        });
        let report = SpectrumReport {
            case: if a.split.is_none() { 1 } else { 2 },
            tangent_without_zero: tangent.without_zero(),
            scaled: a.scaled.clone(),
            unscaled,
            tangent,
            identity,
            splitting,
        };
        write_chain_cache(&self.run.path(CHAIN_BIN), &a.chain, orbit.tol).map_err(|e| f(&e))?;
        write_chain_csv(&self.run.path(CHAIN_CSV), &a.chain).map_err(|e| f(&e))?;
        self.run.write_json(SPECTRUM_JSON, &report)?;
        self.run.write_text(SPECTRUM_LOG, &spectrum_log(&report))?;
        self.progress(Stage::Spectrum, &format!("case {}, ψ* exponents {:?}", report.case, report.scaled.exponents));
        Ok(report)
    }

    // ---- stage 3: strings and blocks -------------------------------------

    fn compute_strings(&mut self) -> Result<StringsReport, CliError> {
        let f = fail("strings");
        let cfg = self.cfg.strings.clone();
        let epsilon = self.cfg.spectrum.epsilon;
        let system = self.system.clone();
        self.analysis()?;
        let a = self.analysis.as_ref().expect("computed");
        let Some(split) = a.split.as_ref() else {
            return Ok(StringsReport {
                case: 1,
                skipped: true,
                pliss_eta: None,
                t_gap: cfg.t_gap,
                segment_count: 0,
                longest_segment: 0.0,
                longest: Vec::new(),
                derivation: None,
                membership: Vec::new(),
                membership_nondecreasing: true,
                members: 0,
                samples: a.chain.len() + 1,
                horizon: cfg.horizon,
            });
        };
        let chain = &a.chain;
        let eta = cfg.eta.unwrap_or(cfg.eta_fraction * split.gap);
        let (lo, hi) = split.converged_range().ok_or_else(|| f(&"no converged samples in the splitting"))?;
        let profile = LogProfile::from_splitting(chain, split, lo, hi - lo, 1);
        let segments = pliss_select(&profile, eta, cfg.t_gap).map_err(|e| f(&e))?;
        let fraction = |p: &PesinBlockParams| membership_fraction(chain, split, system.as_ref(), p, cfg.horizon);
        let derivation = match cfg.c {
            None => block_constants(&a.scaled, epsilon, cfg.t0, cfg.target_fraction, cfg.c_max, fraction).map_err(|e| f(&e))?,
            Some(c) => {
                let mut d = block_derivation(&a.scaled, epsilon, cfg.t0).map_err(|e| f(&e))?;
                d.set_c(c);
                d.fraction = fraction(&d.base_params());
                d.target_met = d.fraction >= cfg.target_fraction;
                d
            }
        };
        let membership: Vec<MembershipPoint> = [1.0, 2.0, 4.0]
            .iter()
            .map(|k| {
                let mut d = derivation;
                d.set_c(k * derivation.c);
                MembershipPoint { c: d.c, fraction: fraction(&d.base_params()) }
            })
            .collect();
        let params = derivation.upgraded_params();
        let horizon = cfg.horizon.max(params.t);
        let flags = member_flags(chain, split, system.as_ref(), &params, horizon);
        let records: Vec<SegmentRecord> = segments
            .iter()
            .map(|s| SegmentRecord { start_t: s.start_t, end_t: s.end_t, duration: s.duration(), margins: s.margins })
            .collect();
        let mut longest = records.clone();
        longest.sort_by(|x, y| y.duration.total_cmp(&x.duration).then(x.start_t.total_cmp(&y.start_t)));
        longest.truncate(LISTED_SEGMENTS);
        let report = StringsReport {
            case: 2,
            skipped: false,
            pliss_eta: Some(eta),
            t_gap: cfg.t_gap,
            segment_count: segments.len(),
            longest_segment: longest.first().map_or(0.0, |s| s.duration),
            longest,
            derivation: Some(derivation),
            membership_nondecreasing: membership.windows(2).all(|w| w[1].fraction >= w[0].fraction),
            membership,
            members: flags.iter().filter(|&&m| m).count(),
            samples: flags.len(),
            horizon,
        };
        let mut csv = String::from("start_t,end_t,duration,contraction,expansion,domination\n");
        for r in &records {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                r.start_t, r.end_t, r.duration, r.margins.contraction, r.margins.expansion, r.margins.domination
            );
        }
        self.run.write_text(MARGINS_CSV, &csv)?;
        self.strings = Some(StringsState { profile, segments, flags, params });
        Ok(report)
    }

    pub fn strings_stage(&mut self) -> Result<StringsReport, CliError> {
        self.run.require(SPECTRUM_JSON, "spectrum")?;
        let report = self.compute_strings()?;
        self.run.write_json(STRINGS_JSON, &report)?;
        self.run.write_text(STRINGS_LOG, &strings_log(&report))?;
        self.progress(
            Stage::Strings,
            &format!("{} strings, longest {:.1}; {} block members", report.segment_count, report.longest_segment, report.members),
        );
        Ok(report)
    }

    // ---- stage 4: close returns, close-up, shadowing ----------------------

    fn try_candidate(&self, id: String, orbit: &OrbitSegment, span: (usize, usize), gap: f64, l: usize) -> Result<Candidate, CliError> {
        let shadow = &self.cfg.shadow;
        let guess = &orbit.slice(span.0, span.1);
        let mut cand = Candidate {
            id: id.clone(),
            gap,
            l,
            start_index: span.0,
            end_index: span.1,
            start_t: guess.times[0],
            end_t: *guess.times.last().expect("samples"),
            duration: guess.duration(),
            accepted: false,
            reason: String::new(),
            orbit: None,
            independent_residual: None,
            shadowing: None,
        };
        let orbit = match close_up(guess, &CloseUpOptions::default()) {
            Ok(o) => o,
            Err(e) => {
                cand.reason = format!("close-up failed: {e}");
                return Ok(cand);
            }
        };
        let report = verify_shadowing(guess, &orbit, shadow.verify_epsilon);
        cand.independent_residual = independent_residual(&orbit, INDEPENDENT_TOL, 10.0).ok();
        cand.shadowing = Some(ShadowingSummary {
            theta_prime_bounds: report.theta_prime_bounds,
            scaled_dist_max: report.scaled_dist_max,
            epsilon_used: report.epsilon_used,
            monotone: report.monotone,
            pass: report.pass,
        });
        cand.accepted = orbit.residual <= shadow.max_residual && report.pass;
        cand.reason = if cand.accepted {
            "accepted".into()
        } else if orbit.residual > shadow.max_residual {
            format!("residual {:e} above {:e}", orbit.residual, shadow.max_residual)
        } else {
            "shadowing check failed".into()
        };
        cand.orbit = Some(orbit.summary());
        if cand.accepted {
            write_orbit_cache(&self.run.path(&format!("orbits/{id}.bin")), &orbit.loop_orbit)
                .map_err(|e| CliError::stage("close", e))?;
            self.run.write_json(&format!("orbits/{id}.json"), &orbit.summary())?;
        }
        Ok(cand)
    }

    pub fn close(&mut self) -> Result<CloseReport, CliError> {
        let strings: StringsReport = self.run.read_json(STRINGS_JSON, "strings")?;
        let schedule = self.cfg.shadow.d_schedule.clone();
        let per_bucket = self.cfg.shadow.candidates_per_bucket;
        let orbit = self.orbit()?.clone();
        let mut buckets: Vec<Bucket> = Vec::new();
        if strings.case == 1 {
            let (k, gap) = recent_return(&orbit).ok_or_else(|| CliError::stage("close", "no return of the final state found"))?;
            let cand = self.try_candidate("c1_0".into(), &orbit, (k, orbit.len() - 1), gap, 1)?;
            buckets.push(Bucket { d_hi: schedule[0], d_lo: 0.0, returns: 1, candidates: vec![cand] });
        } else {
            if self.strings.is_none() {
                self.compute_strings()?;
            }
            let st = self.strings.as_ref().expect("computed");
            let search =
                ReturnSearch { orbit: &orbit, profile: &st.profile, segments: &st.segments, member: &st.flags, params: st.params };
            let all = find_close_returns(&search, schedule[0]);
            for (k, &d_hi) in schedule.iter().enumerate() {
                let d_lo = schedule.get(k + 1).copied().unwrap_or(0.0);
                let inside: Vec<_> = all.iter().filter(|r| r.gap >= d_lo && r.gap < d_hi).collect();
                let mut candidates = Vec::new();
                for (j, r) in inside.iter().take(per_bucket).enumerate() {
                    candidates.push(self.try_candidate(format!("d{k}_{j}"), &orbit, (r.start_index, r.end_index), r.gap, r.l)?);
                    self.progress(Stage::Close, &format!("bucket {k} candidate {j}: {}", candidates[j].reason));
                }
                buckets.push(Bucket { d_hi, d_lo, returns: inside.len(), candidates });
            }
        }
        let accepted: Vec<String> =
            buckets.iter().flat_map(|b| b.candidates.iter()).filter(|c| c.accepted).map(|c| c.id.clone()).collect();
        let largest_converged_gap = buckets
            .iter()
            .flat_map(|b| b.candidates.iter())
            .filter(|c| c.orbit.is_some())
            .map(|c| c.gap)
            .fold(None, |m: Option<f64>, g| Some(m.map_or(g, |m| m.max(g))));
        let report = CloseReport { case: strings.case, buckets, accepted, largest_converged_gap };
        self.run.write_json(CLOSE_JSON, &report)?;
        self.run.write_text(CLOSE_LOG, &close_log(&report))?;
        self.progress(Stage::Close, &format!("{} accepted periodic orbits", report.accepted.len()));
        Ok(report)
    }

    // ---- stage 5: measures ----------------------------------------------

    pub fn compare(&mut self) -> Result<Outcome, CliError> {
        let f = fail("compare");
        let close: CloseReport = self.run.read_json(CLOSE_JSON, "close")?;
        let n = self.cfg.measures.n;
        let epsilon = self.cfg.measures.epsilon;
        let bounds = self.cfg.bounds(&self.system)?;
        let orbit = self.orbit()?.clone();
        let mu = empirical_measure(&orbit).map_err(|e| f(&e))?;

        let mut loops = Vec::new();
        for (b, bucket) in close.buckets.iter().enumerate() {
            for c in bucket.candidates.iter().filter(|c| c.accepted) {
                let p = self.run.require(&format!("orbits/{}.bin", c.id), "close")?;
                let lp = read_orbit_cache(&p, self.system.clone()).map_err(|e| f(&e))?;
                loops.push((b, bucket, c, lp));
            }
        }
        let data: Vec<DVector<f64>> =
            orbit.states.iter().chain(loops.iter().flat_map(|l| l.3.states.iter())).cloned().collect();
        let basis = default_basis(bounds, n, &data).map_err(|e| f(&e))?;

        write_measure_csv(&self.run.path(EMPIRICAL_CSV), &mu).map_err(|e| f(&e))?;
        let mut comparisons = Vec::new();
        for (b, bucket, c, lp) in &loops {
            let mu_p = loop_measure(lp).map_err(|e| f(&e))?;
            write_measure_csv(&self.run.path(&format!("measures/{}.csv", c.id)), &mu_p).map_err(|e| f(&e))?;
            let dm = dm_distance(&mu, &mu_p, &basis, n).map_err(|e| f(&e))?;
            let mu_seg = empirical_measure(&orbit.slice(c.start_index, c.end_index)).map_err(|e| f(&e))?;
            let dm_segment = dm_distance(&mu_seg, &mu_p, &basis, n).map_err(|e| f(&e))?.value;
            comparisons.push(Comparison {
                id: c.id.clone(),
                bucket: *b,
                d_hi: bucket.d_hi,
                gap: c.gap,
                period: lp.duration(),
                upper: dm.upper(),
                dm,
                dm_segment,
            });
        }
        let best_per_bucket: Vec<BucketBest> = close
            .buckets
            .iter()
            .enumerate()
            .map(|(b, bucket)| {
                let best = comparisons
                    .iter()
                    .filter(|c| c.bucket == b)
                    .min_by(|x, y| x.dm.value.total_cmp(&y.dm.value).then(x.id.cmp(&y.id)));
                BucketBest { d_hi: bucket.d_hi, d_lo: bucket.d_lo, id: best.map(|c| c.id.clone()), value: best.map(|c| c.dm.value) }
            })
            .collect();
        let present: Vec<f64> = best_per_bucket.iter().filter_map(|b| b.value).collect();
        let nonincreasing = present.windows(2).all(|w| w[1] <= w[0]);
        let nonincreasing_in_d = present.windows(2).all(|w| w[1] >= w[0]);
        let best = comparisons.iter().min_by(|x, y| x.upper.total_cmp(&y.upper).then(x.id.cmp(&y.id))).cloned();
        let success = best.as_ref().is_some_and(|c| c.upper < epsilon);
        let birkhoff =
            birkhoff_check(&orbit, &mu, &basis, n, &BirkhoffOptions { epsilon, checkpoint: None }).map_err(|e| f(&e))?;
        let k0 = orbit.speeds.iter().copied().fold(0.0, f64::max);
        let report = CompareReport {
            n,
            epsilon,
            tail_bound: 2f64.powi(1 - n as i32),
            comparisons,
            best_per_bucket,
            nonincreasing,
            nonincreasing_in_d,
            best,
            success,
            birkhoff,
            continuity: continuity_diagnostics(&basis, n, epsilon, k0),
        };
        self.run.write_json(COMPARE_JSON, &report)?;
        self.run.write_text(COMPARE_LOG, &compare_log(&report))?;
        let summary = match &report.best {
            Some(b) => format!(
                "d_M(mu, mu_p) <= {:.6} + {:.6} = {:.6} {} {} (orbit {}, period {:.4})",
                b.dm.value,
                b.dm.tail_bound,
                b.upper,
                if report.success { "<" } else { ">=" },
                epsilon,
                b.id,
                b.period
            ),
            None => "no accepted periodic orbit".into(),
        };
        self.progress(Stage::Compare, &summary);
        Ok(Outcome { success: report.success, summary })
    }
}

fn spectrum_log(r: &SpectrumReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "psi* exponents (QR, window {}): {:?}", r.scaled.window, r.scaled.exponents);
    let _ = writeln!(s, "psi exponents: {:?}", r.unscaled.exponents);
    let _ = writeln!(
        s,
        "|lambda(psi) - lambda(psi*)| = {:e}, predicted |log(|X(x_0)|/|X(x_m)|)|/T = {:e}",
        r.identity.max_difference, r.identity.predicted
    );
    let _ = writeln!(s, "tangent exponents: {:?} (flow direction removed: {:?})", r.tangent.exponents, r.tangent_without_zero);
    let _ = writeln!(s, "gap = min |lambda_i| = {}", r.scaled.gap());
    match (&r.splitting, r.case) {
        (_, 1) => {
            let _ = writeln!(s, "case 1: every exponent is negative; the measure sits on an attracting periodic orbit");
        }
        (Some(sp), _) => {
            let _ = writeln!(s, "case 2: index = dim E^s = {}", sp.index);
            let _ = writeln!(
                s,
                "domination: |psi*_t|E| |psi*_-t|F| <= C e^(-lambda t) with C = {}, lambda = {}, residual {}, windows {} (pass: {})",
                sp.domination.c, sp.domination.lambda, sp.domination.residual, sp.domination.windows, sp.domination.pass
            );
            let _ = writeln!(
                s,
                "finite-window agreement: {} of {} samples within {} rad at horizon {}",
                sp.agreement.fraction, sp.agreement.compared, sp.agreement.tolerance, sp.agreement_horizon
            );
        }
        _ => {}
    }
    s
}

fn strings_log(r: &StringsReport) -> String {
    let mut s = String::new();
    if r.skipped {
        let _ = writeln!(s, "case 1: no strings needed, the orbit is attracted to a periodic orbit");
        return s;
    }
    if let Some(d) = &r.derivation {
        let _ = writeln!(s, "chi = min(|lambda^-|, lambda^+) = {}", d.chi);
        let _ = writeln!(s, "epsilon = {} (in (0, chi/2))", d.epsilon);
        let _ = writeln!(s, "T0 = {}", d.t0);
        let _ = writeln!(s, "eta0 = (chi - epsilon/4) * T0 = {}", d.eta0);
        let _ = writeln!(s, "C = {} (base-block fraction {} , target met: {})", d.c, d.fraction, d.target_met);
        let _ = writeln!(s, "j0 = floor(4 ln C / (T0 epsilon)) + 1 = {}", d.j0);
        let _ = writeln!(s, "T = j0 * T0 = {}", d.t);
        let _ = writeln!(s, "eta = (chi - epsilon/2) * T = {}", d.eta);
    }
    for m in &r.membership {
        let _ = writeln!(s, "membership fraction at C = {}: {}", m.c, m.fraction);
    }
    if let Some(eta) = r.pliss_eta {
        let _ = writeln!(s, "Pliss selection: eta = {eta}, T = {}", r.t_gap);
    }
    let _ = writeln!(s, "{} strings, longest {}", r.segment_count, r.longest_segment);
    let _ = writeln!(s, "{} of {} samples in the upgraded block (horizon {})", r.members, r.samples, r.horizon);
    s
}

fn close_log(r: &CloseReport) -> String {
    let mut s = String::new();
    for b in &r.buckets {
        let _ = writeln!(s, "D in [{}, {}): {} returns", b.d_lo, b.d_hi, b.returns);
        for c in &b.candidates {
            let period = c.orbit.as_ref().map_or(f64::NAN, |o| o.period);
            let residual = c.orbit.as_ref().map_or(f64::NAN, |o| o.residual);
            let _ = writeln!(
                s,
                "  {}: gap {} l {} duration {} -> period {} residual {:e}: {}",
                c.id, c.gap, c.l, c.duration, period, residual, c.reason
            );
        }
    }
    let _ = writeln!(s, "largest converged gap: {:?}", r.largest_converged_gap);
    s
}

fn compare_log(r: &CompareReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "n = {}, tail 2^-(n-1) = {} ({} eps/2 = {})", r.n, r.tail_bound, if r.tail_bound < r.epsilon / 2.0 { "<" } else { ">=" }, r.epsilon / 2.0);
    let _ = writeln!(s, "Birkhoff threshold (eps/4n) min 2^i |f_i| = {}", r.birkhoff.threshold);
    let _ = writeln!(s, "T1 = {:?}", r.birkhoff.t1);
    let c = &r.continuity;
    let _ = writeln!(s, "K = max |f_i| = {}", c.k_norm);
    let _ = writeln!(s, "gamma < threshold / (2K + 1) = {}", c.gamma);
    let _ = writeln!(s, "xi = min(gamma, gamma / (L K0)) = {} with L = {}, K0 = {}", c.xi, c.lipschitz_max, c.k0);
    for b in &r.best_per_bucket {
        let _ = writeln!(s, "bucket [{}, {}): best {:?} ({:?})", b.d_lo, b.d_hi, b.value, b.id);
    }
    for c in &r.comparisons {
        let _ = writeln!(
            s,
            "  {}: period {} gap {} d_M(mu, mu_p) = {:e}, d_M(segment, mu_p) = {:e}",
            c.id, c.period, c.gap, c.dm.value, c.dm_segment
        );
    }
    let _ = writeln!(s, "best per bucket nonincreasing as D shrinks: {}", r.nonincreasing);
    let _ = writeln!(s, "best per bucket nonincreasing as D grows: {}", r.nonincreasing_in_d);
    match &r.best {
        Some(b) => {
            let _ = writeln!(
                s,
                "d_M(mu, mu_p) <= sum_(i<=n) |int f_i dmu - int f_i dmu_p| / (2^i |f_i|) + 2^-(n-1) = {:e} + {} = {} {} eps = {}",
                b.dm.value,
                b.dm.tail_bound,
                b.upper,
                if r.success { "<" } else { ">=" },
                r.epsilon
            );
            let _ = writeln!(s, "periodic orbit {} (period {}, gap {})", b.id, b.period, b.gap);
        }
        None => {
            let _ = writeln!(s, "no accepted periodic orbit");
        }
    }
    s
}
