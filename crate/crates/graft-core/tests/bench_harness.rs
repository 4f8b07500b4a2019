//! End-to-end benchmark harness checks that need the counting allocator
//! installed in the test binary. Everything runs inside one test function
//! so the allocator counters are never shared between parallel tests.

use graft_core::bench::{
    emit, records_from_csv, run_bench, BenchConfig, BenchVariant, CountingAllocator,
};

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator;

#[test]
fn harness_measures_skips_and_reproduces() {
    let cfg = BenchConfig {
        lengths: vec![200, 400],
        edges_per_token: 3,
        variants: BenchVariant::ALL.to_vec(),
        repeats: 3,
        dense_cutoff: 300,
        memory_budget_bytes: 1 << 30,
        seed: 5,
    };
    let report = run_bench(&cfg).expect("small benchmark run");

    // Sparse variants run at both lengths, dense only below the cutoff.
    for variant in [
        BenchVariant::Sparse,
        BenchVariant::SparseDiffusionK2,
        BenchVariant::SparseDiffusionK6,
    ] {
        let lengths: Vec<usize> = report
            .records
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| r.length)
            .collect();
        assert_eq!(lengths, vec![200, 400], "{variant:?}");
    }
    for variant in [BenchVariant::DenseMask, BenchVariant::DenseFull] {
        let lengths: Vec<usize> = report
            .records
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| r.length)
            .collect();
        assert_eq!(lengths, vec![200], "{variant:?}");
        assert!(report
            .skipped
            .iter()
            .any(|s| s.variant == variant && s.length == 400 && s.reason.contains("cutoff")));
    }

    for r in &report.records {
        assert!(r.peak_bytes > 0, "{r:?}");
        assert!(r.cpu_time_ms > 0.0, "{r:?}");
        assert!(r.nnz > 0, "{r:?}");
    }

    // The masked variants share the mask's entry count; the full dense
    // baseline attends to every pair.
    let nnz_of = |variant, length| {
        report
            .records
            .iter()
            .find(|r| r.variant == variant && r.length == length)
            .map(|r| r.nnz)
            .unwrap()
    };
    assert_eq!(
        nnz_of(BenchVariant::Sparse, 200),
        nnz_of(BenchVariant::DenseMask, 200)
    );
    assert_eq!(nnz_of(BenchVariant::DenseFull, 200), 200 * 200);

    // Peak memory is deterministic, so the sparse curve must be monotone
    // and the quadratic dense footprint must dwarf the sparse one.
    let peak_of = |variant, length| {
        report
            .records
            .iter()
            .find(|r| r.variant == variant && r.length == length)
            .map(|r| r.peak_bytes)
            .unwrap()
    };
    assert!(peak_of(BenchVariant::Sparse, 400) > peak_of(BenchVariant::Sparse, 200));
    assert!(peak_of(BenchVariant::DenseMask, 200) > peak_of(BenchVariant::Sparse, 200));
    // Longer diffusion keeps more intermediate states alive.
    assert!(
        peak_of(BenchVariant::SparseDiffusionK6, 400)
            >= peak_of(BenchVariant::SparseDiffusionK2, 400)
    );

    // A rerun with the same seed reproduces everything except wall time.
    let again = run_bench(&cfg).expect("identical rerun");
    assert_eq!(again.records.len(), report.records.len());
    for (a, b) in report.records.iter().zip(&again.records) {
        assert_eq!(a.variant, b.variant);
        assert_eq!(a.length, b.length);
        assert_eq!(a.nnz, b.nnz);
        assert_eq!(a.peak_bytes, b.peak_bytes, "{:?} at {}", a.variant, a.length);
    }
    assert_eq!(again.skipped, report.skipped);

    // Emitted artifacts: exact CSV header, records round-trip, summary
    // carries the skip list.
    let dir = tempfile::tempdir().unwrap();
    emit(dir.path(), &cfg, &report).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    assert!(csv.starts_with("variant,length,nnz,peak_bytes,cpu_time_ms\n"));
    assert_eq!(records_from_csv(&csv).unwrap(), report.records);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["skipped"].as_array().unwrap().len(), report.skipped.len());
    // Two lengths cannot support a fit, so the fit map stays empty.
    assert!(summary["fits"].as_object().unwrap().is_empty());

    // A budget too small for any dense point records out-of-memory skips
    // instead of failing the run.
    let starved = BenchConfig {
        lengths: vec![200],
        variants: vec![BenchVariant::Sparse, BenchVariant::DenseMask],
        memory_budget_bytes: 1024,
        ..cfg
    };
    let report = run_bench(&starved).expect("starved run still succeeds");
    assert_eq!(report.records.len(), 1);
    assert_eq!(report.records[0].variant, BenchVariant::Sparse);
    assert_eq!(report.skipped.len(), 1);
    assert!(report.skipped[0].reason.contains("memory budget exceeded"));
}
