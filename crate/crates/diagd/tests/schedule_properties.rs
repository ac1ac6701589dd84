//! Property tests for schedule construction and step arithmetic.

use std::collections::HashSet;

use proptest::prelude::*;

use diagd::{
    build_schedule, speedup, step_count, validate_config, Coordinate, DiagConfig, GridGeometry,
    PredecessorPolicy, TemporalDelay,
};

fn geometry() -> impl Strategy<Value = GridGeometry> {
    (1usize..=4, 1usize..=24, 1usize..=24, 0usize..=2)
        .prop_map(|(t, h, w, p)| GridGeometry::new(t, h, w, p, 16).unwrap())
}

fn geometry_and_config() -> impl Strategy<Value = (GridGeometry, DiagConfig)> {
    geometry().prop_flat_map(|g| {
        (1usize..=g.width).prop_flat_map(move |k| {
            let s_spa = (g.height - 1) * k + g.width;
            (1usize..=s_spa)
                .prop_map(move |d| (g, DiagConfig::temporal(k, d, PredecessorPolicy::Raster)))
        })
    })
}

proptest! {
    #[test]
    fn raster_round_trip((geom, _) in geometry_and_config(), salt in 0usize..1000) {
        let idx = salt % geom.generated_tokens();
        let c = geom.raster_coord(idx).unwrap();
        prop_assert_eq!(geom.raster_index(c).unwrap(), idx);
    }

    #[test]
    fn s_spa_formula(h in 1usize..=256, w in 1usize..=256, k_salt in 0usize..256) {
        let geom = GridGeometry::new(1, h, w, 0, 16).unwrap();
        let k = 1 + k_salt % w;
        let cfg = DiagConfig::temporal(k, 1, PredecessorPolicy::Raster);
        let summary = validate_config(&geom, &cfg).unwrap();
        prop_assert_eq!(summary.s_spa, (h - 1) * k + w);
    }

    #[test]
    fn wavefronts_partition_all_coordinates((geom, cfg) in geometry_and_config()) {
        let sched = build_schedule(&geom, &cfg).unwrap();
        let mut seen = HashSet::new();
        for (idx, front) in sched.wavefronts().iter().enumerate() {
            prop_assert!(!front.is_empty(), "wavefront {} is empty", idx + 1);
            for &c in front {
                prop_assert!(seen.insert(c), "coordinate decoded twice");
                prop_assert_eq!(sched.step_of(c).unwrap(), idx + 1);
            }
        }
        prop_assert_eq!(seen.len(), geom.generated_tokens());
    }

    #[test]
    fn dependencies_are_monotone((geom, cfg) in geometry_and_config()) {
        let sched = build_schedule(&geom, &cfg).unwrap();
        let d = sched.effective_d();
        let k = cfg.k;
        for p in geom.generated_coords() {
            let sp = sched.step_of(p).unwrap();
            if p.col > 0 {
                let left = Coordinate::new(p.frame, p.row, p.col - 1);
                prop_assert!(sched.step_of(left).unwrap() < sp);
            }
            if p.row > 0 {
                // Every previous-row column up to j + k - 1 is strictly earlier.
                let limit = (p.col + k - 1).min(geom.width - 1);
                for j in 0..=limit {
                    let up = Coordinate::new(p.frame, p.row - 1, j);
                    prop_assert!(sched.step_of(up).unwrap() < sp);
                }
            }
            if p.frame > 0 {
                let prev = Coordinate::new(p.frame - 1, p.row, p.col);
                prop_assert_eq!(sched.step_of(prev).unwrap(), sp - d);
            }
        }
    }

    #[test]
    fn degenerate_config_is_raster(geom in geometry()) {
        let cfg = DiagConfig::new(
            geom.width,
            TemporalDelay::SpatialOnly,
            PredecessorPolicy::Raster,
        );
        let sched = build_schedule(&geom, &cfg).unwrap();
        prop_assert_eq!(sched.total_steps(), geom.generated_tokens());
        for c in geom.generated_coords() {
            prop_assert_eq!(sched.step_of(c).unwrap(), geom.raster_index(c).unwrap() + 1);
        }
    }

    #[test]
    fn closed_form_matches_enumerated_length((geom, cfg) in geometry_and_config()) {
        // Independent oracle: enumerate the distinct step values of every
        // coordinate and confirm they tile 1..=S with no gaps.
        let summary = validate_config(&geom, &cfg).unwrap();
        let d = summary.effective_d;
        let mut hit = vec![false; geom.generated_tokens() + 1];
        let mut max_step = 0usize;
        for c in geom.generated_coords() {
            let step = c.frame as usize * d + cfg.k * c.row + c.col + 1;
            hit[step] = true;
            max_step = max_step.max(step);
        }
        prop_assert!(hit[1..=max_step].iter().all(|&b| b), "steps must be contiguous");
        prop_assert_eq!(step_count(&geom, &cfg).unwrap(), max_step);
        prop_assert_eq!(build_schedule(&geom, &cfg).unwrap().total_steps(), max_step);
    }

    #[test]
    fn speedup_ratio_is_exact((geom, cfg) in geometry_and_config()) {
        let report = speedup(&geom, &cfg).unwrap();
        prop_assert_eq!(report.steps_ntp, geom.generated_tokens());
        prop_assert_eq!(report.steps_diag, step_count(&geom, &cfg).unwrap());
        prop_assert!(report.steps_diag <= report.steps_ntp);
        prop_assert!(report.ratio_exact >= 1.0);
        // The float ratio is exactly the quotient of the stored integers.
        prop_assert_eq!(
            report.ratio_exact.to_bits(),
            (report.steps_ntp as f64 / report.steps_diag as f64).to_bits()
        );
    }
}
