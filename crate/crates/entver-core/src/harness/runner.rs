//! Scenario execution: seed derivation, protocol dispatch, parallel runs.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::protocols::{
    bell_operator_witness, chsh_optimal_settings, chsh_test, direct_concurrence_2copy,
    moment_concurrence, pauli6_decomposition, teleport_test, tomography_test,
    werner_optimal_witness, witness_test, ChshOptions, Compliance, DirectOptions, ExecMode,
    MomentOptions, TeleportOptions, TomographyOptions, VerifierReport,
};
use crate::sources::MOMENT_GROUP_SIZE;
use crate::statproc::derive_seed;

use super::report::{emit_csv, emit_jsonl, emit_table, write_reports, ReportFormat};
use super::{
    Classification, Mode, ProtocolSpec, RunReport, Scenario, ScenarioConfig, WitnessChoice,
};

impl From<Mode> for Compliance {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Compliant => Compliance::Compliant,
            Mode::Naive => Compliance::Naive,
        }
    }
}

fn dispatch(sc: &Scenario, seed: u64) -> Result<VerifierReport> {
    let src = sc.source.build()?;
    let mode = if sc.shots == 0 {
        ExecMode::Exact
    } else {
        ExecMode::Sampled { shots: sc.shots }
    };
    match &sc.protocol {
        ProtocolSpec::Chsh {
            detection_eta,
            postselect,
            ..
        } => chsh_test(
            &src,
            &chsh_optimal_settings(),
            mode,
            ChshOptions {
                detection_eta: *detection_eta,
                postselect: *postselect,
            },
            seed,
        ),
        ProtocolSpec::Witness {
            witness,
            detection_eta,
            ..
        } => {
            let (w, dec) = match witness {
                WitnessChoice::WernerOptimal => {
                    let w = werner_optimal_witness();
                    let dec = pauli6_decomposition(&w)?;
                    (w, dec)
                }
                WitnessChoice::BellOperator => bell_operator_witness(&chsh_optimal_settings())?,
            };
            witness_test(
                &src,
                &w,
                &dec,
                mode,
                crate::protocols::witness::WitnessOptions {
                    detection_eta: *detection_eta,
                },
                seed,
            )
        }
        ProtocolSpec::Tomography {
            policy,
            postselection,
            ..
        } => {
            let options = TomographyOptions {
                policy: *policy,
                postselection: *postselection,
            };
            tomography_test(&src, sc.shots, options, mode, seed).map(|(_, rep)| rep)
        }
        ProtocolSpec::Teleport {
            ensemble,
            threshold,
            ..
        } => {
            let ens = ensemble.build()?;
            let f_tilde = threshold
                .or_else(|| ensemble.default_threshold())
                .ok_or_else(|| {
                    Error::Config("subset ensembles need an explicit classical threshold".into())
                })?;
            teleport_test(&src, &ens, f_tilde, mode, TeleportOptions::default(), seed)
        }
        ProtocolSpec::Direct2copy {
            mode: m,
            pairing,
            sides,
        } => direct_concurrence_2copy(
            &src,
            DirectOptions {
                pairing: *pairing,
                sides: *sides,
                compliance: (*m).into(),
            },
            mode,
            seed,
        ),
        ProtocolSpec::Moment20copy { mode: m, grouping } => moment_concurrence(
            &src,
            MomentOptions {
                group_size: MOMENT_GROUP_SIZE,
                grouping: *grouping,
                compliance: (*m).into(),
            },
            mode,
            seed,
        ),
    }
}

/// Runs one scenario under a master seed.
pub fn run_scenario(sc: &Scenario, master_seed: u64) -> Result<RunReport> {
    let seed = derive_seed(master_seed, &sc.name);
    let started = Instant::now();
    let report = dispatch(sc, seed)?;
    let wall_ms = started.elapsed().as_millis();
    let src = sc.source.build()?;
    let gt = src.ground_truth();
    let classification = Classification::from_verdict(report.verdict, gt.entanglement);
    Ok(RunReport {
        scenario: sc.name.clone(),
        report,
        ground_truth_entanglement: gt.entanglement,
        ground_truth_measure: gt.measure,
        classification,
        expected: sc.expected,
        matched: classification.matches(sc.expected),
        seed,
        wall_ms,
    })
}

/// Outcome of a whole config run.
#[derive(Debug)]
pub struct RunOutcome {
    /// Successful reports, in config order.
    pub reports: Vec<RunReport>,
    /// Scenario-level runtime failures (name, message), in config order.
    pub errors: Vec<(String, String)>,
}

impl RunOutcome {
    pub fn all_matched(&self) -> bool {
        self.reports.iter().all(|r| r.matched)
    }

    /// 0: all matched. 1: some classification mismatched. 3: a scenario
    /// failed at runtime (others still ran).
    pub fn exit_code(&self) -> i32 {
        if !self.errors.is_empty() {
            3
        } else if !self.all_matched() {
            1
        } else {
            0
        }
    }
}

/// Runs every scenario (in parallel when `jobs != Some(1)`); report order
/// follows the config regardless of scheduling.
pub fn run_config(config: &ScenarioConfig, jobs: Option<usize>) -> RunOutcome {
    let run_all = || -> Vec<(String, Result<RunReport>)> {
        config
            .scenarios
            .par_iter()
            .map(|sc| (sc.name.clone(), run_scenario(sc, config.master_seed)))
            .collect()
    };
    let results = match jobs {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(run_all))
            .unwrap_or_else(|_| run_all()),
        _ => run_all(),
    };
    let mut reports = Vec::new();
    let mut errors = Vec::new();
    for (name, res) in results {
        match res {
            Ok(r) => reports.push(r),
            Err(e) => errors.push((name, e.to_string())),
        }
    }
    RunOutcome { reports, errors }
}

/// Executes a config file end to end: runs scenarios, writes
/// `report.jsonl` and `report.csv` under `out_dir`, prints the chosen
/// format to stdout, and returns the process exit code (2 on config
/// errors).
pub fn run_scenarios(
    config_path: Option<&Path>,
    out_dir: &Path,
    seed_override: Option<u64>,
    stdout_format: ReportFormat,
    jobs: Option<usize>,
) -> i32 {
    let mut config = match config_path {
        Some(p) => match ScenarioConfig::from_path(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("config error: {e}");
                return 2;
            }
        },
        None => bundled_config(),
    };
    if let Some(seed) = seed_override {
        config.master_seed = seed;
    }
    let outcome = run_config(&config, jobs);
    for (name, msg) in &outcome.errors {
        eprintln!("scenario {name:?} failed: {msg}");
    }
    if !outcome.reports.is_empty() {
        if let Err(e) = write_reports(&outcome.reports, out_dir) {
            eprintln!("cannot write reports: {e}");
            return 3;
        }
        match stdout_format {
            ReportFormat::Jsonl => print!("{}", emit_jsonl(&outcome.reports)),
            ReportFormat::Csv => print!("{}", emit_csv(&outcome.reports)),
            ReportFormat::Table => print!("{}", emit_table(&outcome.reports)),
        }
    }
    outcome.exit_code()
}

/// The built-in demonstration suite: every protocol at least once in
/// compliant mode, every trap source at least once in naive mode.
pub fn bundled_config() -> ScenarioConfig {
    use super::{DefinettiComponent, EnsembleSpec, ExpectedOutcome, SourceSpec};
    use crate::protocols::{AnalyzerPhasePolicy, Grouping2, Postselection, Sides};
    use crate::sources::{CheatKind, DualRailVariant, PhaseLaw};

    let sc = |name: &str,
              source: SourceSpec,
              protocol: ProtocolSpec,
              shots: u64,
              expected: ExpectedOutcome| Scenario {
        name: name.into(),
        source,
        protocol,
        shots,
        expected,
    };
    let chsh = |mode: Mode| ProtocolSpec::Chsh {
        mode,
        detection_eta: 1.0,
        postselect: false,
    };
    let witness = |w: WitnessChoice| ProtocolSpec::Witness {
        mode: Mode::Compliant,
        witness: w,
        detection_eta: 1.0,
    };
    let tomo =
        |mode: Mode, policy: AnalyzerPhasePolicy, post: Postselection| ProtocolSpec::Tomography {
            mode,
            policy,
            postselection: post,
        };
    let teleport_m = ProtocolSpec::Teleport {
        mode: Mode::Compliant,
        ensemble: EnsembleSpec::M,
        threshold: None,
    };
    let direct = |mode: Mode, pairing: Grouping2, sides: Sides| ProtocolSpec::Direct2copy {
        mode,
        pairing,
        sides,
    };
    let moment = |mode: Mode, grouping: Grouping2| ProtocolSpec::Moment20copy { mode, grouping };

    use ExpectedOutcome::{Certify, Fooled, Refuse};
    let independent = AnalyzerPhasePolicy::Independent;
    let scenarios = vec![
        sc(
            "singlet-chsh-exact",
            SourceSpec::Werner { alpha: 1.0 },
            chsh(Mode::Compliant),
            0,
            Certify,
        ),
        sc(
            "singlet-chsh-sampled",
            SourceSpec::Werner { alpha: 1.0 },
            chsh(Mode::Compliant),
            20_000,
            Certify,
        ),
        sc(
            "singlet-chsh-fair-sampling",
            SourceSpec::Werner { alpha: 1.0 },
            ProtocolSpec::Chsh {
                mode: Mode::Compliant,
                detection_eta: 0.85,
                postselect: true,
            },
            40_000,
            Certify,
        ),
        sc(
            "werner06-chsh-missed",
            SourceSpec::Werner { alpha: 0.6 },
            chsh(Mode::Compliant),
            0,
            Refuse,
        ),
        sc(
            "werner06-witness-optimal",
            SourceSpec::Werner { alpha: 0.6 },
            witness(WitnessChoice::WernerOptimal),
            0,
            Certify,
        ),
        sc(
            "werner06-bell-witness-missed",
            SourceSpec::Werner { alpha: 0.6 },
            witness(WitnessChoice::BellOperator),
            0,
            Refuse,
        ),
        sc(
            "werner-third-witness-boundary",
            SourceSpec::Werner { alpha: 1.0 / 3.0 },
            witness(WitnessChoice::WernerOptimal),
            0,
            Refuse,
        ),
        sc(
            "heralded-witness",
            SourceSpec::Heralded { p_yes: 0.6 },
            witness(WitnessChoice::WernerOptimal),
            30_000,
            Certify,
        ),
        sc(
            "aposteriori-clicks-tomography",
            SourceSpec::APosteriori { p: 0.05 },
            tomo(Mode::Compliant, independent, Postselection::LocalClicks),
            0,
            Certify,
        ),
        sc(
            "phase-mixed-tomography-independent",
            SourceSpec::PhaseMixed {
                law: PhaseLaw::Uniform,
                leak_phase: true,
            },
            tomo(Mode::Compliant, independent, Postselection::None),
            300,
            Refuse,
        ),
        sc(
            "singlet-tomography-sampled",
            SourceSpec::Werner { alpha: 1.0 },
            tomo(Mode::Compliant, independent, Postselection::None),
            300,
            Certify,
        ),
        sc(
            "phase-trap-shared-path",
            SourceSpec::PhaseMixed {
                law: PhaseLaw::Uniform,
                leak_phase: true,
            },
            tomo(
                Mode::Naive,
                AnalyzerPhasePolicy::SharedPath,
                Postselection::None,
            ),
            300,
            Fooled,
        ),
        sc(
            "dualrail-product-postselect-trap",
            SourceSpec::DualRail {
                variant: DualRailVariant::ProductEq10,
                epsilon: 0.1,
                phase: 0.8,
            },
            tomo(Mode::Naive, independent, Postselection::OnePhotonTotal),
            0,
            Fooled,
        ),
        sc(
            "dualrail-entangled-postselect",
            SourceSpec::DualRail {
                variant: DualRailVariant::EntangledEq9,
                epsilon: 0.1,
                phase: 0.8,
            },
            tomo(Mode::Naive, independent, Postselection::OnePhotonTotal),
            0,
            Certify,
        ),
        sc(
            "dualrail-product-local-clicks",
            SourceSpec::DualRail {
                variant: DualRailVariant::ProductEq10,
                epsilon: 0.1,
                phase: 0.8,
            },
            tomo(Mode::Compliant, independent, Postselection::LocalClicks),
            0,
            Refuse,
        ),
        sc(
            "werner-half-teleport",
            SourceSpec::Werner { alpha: 0.5 },
            teleport_m.clone(),
            0,
            Certify,
        ),
        sc(
            "mixed-teleport-refuse",
            SourceSpec::Werner { alpha: 0.0 },
            teleport_m.clone(),
            0,
            Refuse,
        ),
        sc(
            "werner-half-teleport-sampled",
            SourceSpec::Werner { alpha: 0.5 },
            teleport_m,
            30_000,
            Certify,
        ),
        sc(
            "singlet-fraction-naive",
            SourceSpec::Cheat {
                cheat: CheatKind::SingletFraction,
            },
            direct(Mode::Naive, Grouping2::FixedConsecutive, Sides::AOnly),
            10_000,
            Fooled,
        ),
        sc(
            "singlet-fraction-compliant",
            SourceSpec::Cheat {
                cheat: CheatKind::SingletFraction,
            },
            direct(
                Mode::Compliant,
                Grouping2::Random,
                Sides::BothWithCorrelations,
            ),
            10_000,
            Refuse,
        ),
        sc(
            "singlet-direct-compliant",
            SourceSpec::Werner { alpha: 1.0 },
            direct(
                Mode::Compliant,
                Grouping2::Random,
                Sides::BothWithCorrelations,
            ),
            10_000,
            Certify,
        ),
        sc(
            "cross-side-naive",
            SourceSpec::Cheat {
                cheat: CheatKind::CrossSideCorrelated,
            },
            direct(
                Mode::Naive,
                Grouping2::FixedConsecutive,
                Sides::BothWithCorrelations,
            ),
            10_000,
            Fooled,
        ),
        sc(
            "anti-grouping-naive",
            SourceSpec::Cheat {
                cheat: CheatKind::AntiGrouping {
                    group_size: MOMENT_GROUP_SIZE,
                },
            },
            moment(Mode::Naive, Grouping2::FixedConsecutive),
            4_000,
            Fooled,
        ),
        sc(
            "anti-grouping-compliant",
            SourceSpec::Cheat {
                cheat: CheatKind::AntiGrouping {
                    group_size: MOMENT_GROUP_SIZE,
                },
            },
            moment(Mode::Compliant, Grouping2::Random),
            4_000,
            Refuse,
        ),
        sc(
            "werner08-moment-compliant",
            SourceSpec::Werner { alpha: 0.8 },
            moment(Mode::Compliant, Grouping2::Random),
            6_000,
            Certify,
        ),
        sc(
            "definetti-tomography",
            SourceSpec::Definetti {
                components: vec![
                    DefinettiComponent {
                        weight: 0.5,
                        werner_alpha: 1.0,
                    },
                    DefinettiComponent {
                        weight: 0.5,
                        werner_alpha: 0.8,
                    },
                ],
            },
            tomo(Mode::Compliant, independent, Postselection::None),
            300,
            Certify,
        ),
    ];
    ScenarioConfig {
        master_seed: 20080427,
        scenarios,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_is_valid() {
        let cfg = bundled_config();
        cfg.validate().unwrap();
        assert!(cfg.scenarios.len() >= 20);
    }

    #[test]
    fn bundled_suite_covers_every_protocol_and_trap() {
        let cfg = bundled_config();
        let compliant_kinds: std::collections::HashSet<&str> = cfg
            .scenarios
            .iter()
            .filter(|s| s.protocol.mode() == Mode::Compliant)
            .map(|s| s.protocol.kind_name())
            .collect();
        for kind in [
            "chsh",
            "witness",
            "tomography",
            "teleport",
            "direct_2copy",
            "moment_20copy",
        ] {
            assert!(
                compliant_kinds.contains(kind),
                "no compliant {kind} scenario"
            );
        }
        let fooled: Vec<&Scenario> = cfg
            .scenarios
            .iter()
            .filter(|s| s.expected == super::super::ExpectedOutcome::Fooled)
            .collect();
        assert!(fooled.len() >= 4);
        for s in fooled {
            assert!(!s.protocol.declared_violations(&s.source).is_empty());
        }
    }

    #[test]
    fn scenario_seed_depends_only_on_master_and_name() {
        let cfg = bundled_config();
        let sc = &cfg.scenarios[0];
        let r1 = run_scenario(sc, cfg.master_seed).unwrap();
        let r2 = run_scenario(sc, cfg.master_seed).unwrap();
        assert_eq!(r1.report.statistic, r2.report.statistic);
        assert_eq!(r1.seed, r2.seed);
    }
}
