use proptest::prelude::*;

use kvedram::cli::RunConfig;
use kvedram::perfmodel::{lifetime_kelle, report_diff, run_config, RunReport, Scenario, SystemKind};
use kvedram::Error;

fn la(kind: SystemKind) -> Scenario {
    let mut c = RunConfig::default();
    c.workload.preset = Some("la".into());
    c.workload.seed = Some(2);
    c.system.name = Some(kind.name().into());
    c.run.seed = Some(5);
    c.scenario().unwrap()
}

fn small(kind: SystemKind) -> Scenario {
    let text = format!(
        "[workload]\nprefill = 64\ndecode = 192\nbatch = 2\nseed = 4\n\
         [model]\nchannels = 512\nheads = 8\nlayers = 4\n\
         [aerp]\nn_prime = 96\nsink_count = 4\nrecent_window = 32\n\
         [system]\nname = \"{}\"\n",
        kind.name()
    );
    RunConfig::from_toml(&text).unwrap().scenario().unwrap()
}

#[test]
fn more_edram_bandwidth_never_slows_a_run() {
    let mut last = f64::INFINITY;
    for gbps in [16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0] {
        let mut sc = la(SystemKind::KelleEdram);
        sc.tech.edram.bandwidth_bytes_per_s = gbps * 1e9;
        let t = run_config(&sc).unwrap().latency.total;
        assert!(t <= last, "{gbps} GB/s: {t} > {last}");
        last = t;
    }
}

#[test]
fn larger_budget_never_lowers_refresh_energy() {
    let mut last = 0.0;
    for n_prime in [80, 128, 200, 320, 480, 640] {
        let mut sc = la(SystemKind::KelleEdram);
        sc.budget.n_prime = n_prime;
        let e = run_config(&sc).unwrap().energy.refresh;
        assert!(e >= last, "N'={n_prime}: {e} < {last}");
        last = e;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bandwidth_monotone_on_random_pairs(a in 8.0f64..2048.0, b in 8.0f64..2048.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let run = |g: f64| {
            let mut sc = small(SystemKind::KelleEdram);
            sc.tech.edram.bandwidth_bytes_per_s = g * 1e9;
            run_config(&sc).unwrap().latency.total
        };
        prop_assert!(run(hi) <= run(lo));
    }
}

#[test]
fn seeds_change_flips_only() {
    let a = run_config(&la(SystemKind::KelleEdram)).unwrap();
    let mut sc = la(SystemKind::KelleEdram);
    sc.seed = 6;
    let b = run_config(&sc).unwrap();
    let d = report_diff(&a, &b).unwrap();
    for (k, c) in d.energy.iter().chain(&d.latency) {
        assert_eq!(c.ratio, Some(1.0), "{k}");
    }
    assert!(a.counters.flips_total > 0);
    assert_ne!(a.counters.flips, b.counters.flips);
    assert_ne!(a.config_hash, b.config_hash);
}

#[test]
fn diff_against_itself_is_all_ones() {
    let a = run_config(&small(SystemKind::AerpSram)).unwrap();
    let d = report_diff(&a, &a).unwrap();
    for (k, c) in d.energy.iter().chain(&d.latency).chain(&d.counters) {
        assert_eq!(c.ratio, Some(1.0), "{k}");
        assert_eq!(c.delta, 0.0);
    }
}

#[test]
fn report_schema_is_pinned() {
    let a = run_config(&small(SystemKind::OriginalSram)).unwrap();
    assert_eq!(a.schema_version, "kvedram-report/1");
    let json = a.to_json().unwrap();
    assert_eq!(RunReport::from_json(&json).unwrap(), a);
    let old = json.replace("kvedram-report/1", "kvedram-report/0");
    assert!(matches!(RunReport::from_json(&old), Err(Error::SchemaMismatch(..))));
    let mut b = a.clone();
    b.schema_version = "kvedram-report/0".into();
    assert!(matches!(report_diff(&a, &b), Err(Error::SchemaMismatch(..))));
}

#[test]
fn every_category_is_reported() {
    let r = run_config(&small(SystemKind::KelleEdram)).unwrap();
    let e = r.energy;
    for (name, v) in [
        ("compute", e.compute),
        ("weights", e.weights),
        ("kv_cache", e.kv_cache),
        ("refresh", e.refresh),
        ("leakage", e.leakage),
        ("dram", e.dram),
    ] {
        assert!(v > 0.0, "{name}");
    }
    assert!((e.total - e.category_sum()).abs() <= 1e-12 * e.total);
    let l = lifetime_kelle(r.lifetime.t_sram, r.lifetime.t_edram);
    assert_eq!(r.lifetime.scheduled_total, l.total);
}

#[test]
fn oversized_batch_is_a_capacity_error() {
    let mut sc = la(SystemKind::OriginalSram);
    if let kvedram::perfmodel::WorkloadSource::Synthetic(s) = &mut sc.workload {
        s.batch = 64;
    }
    assert!(matches!(run_config(&sc), Err(Error::Capacity { .. })));
}

#[test]
fn refresh_free_systems_report_no_refresh() {
    for kind in [SystemKind::OriginalSram, SystemKind::AepSram, SystemKind::AerpSram] {
        let r = run_config(&small(kind)).unwrap();
        assert_eq!(r.energy.refresh, 0.0, "{}", kind.name());
        assert_eq!(r.counters.flips_total, 0);
    }
}
