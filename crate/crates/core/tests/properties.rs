//! Property tests for the algebraic invariants of the oracle layer and the
//! family engine.

use proptest::prelude::*;
use siirv_lab::catalog;
use siirv_lab::covers;
use siirv_lab::expfam::{self, ParamVector};
use siirv_lab::pmf_core::{self, PMFTable};
use siirv_lab::rng::SplitRng;

const CAP: usize = 1 << 22;
const TRIM: f64 = 1e-15;

fn table_strategy() -> impl Strategy<Value = PMFTable> {
    (
        -20i64..20,
        proptest::collection::vec(0.01f64..1.0, 1..24),
        0.0f64..0.2,
    )
        .prop_map(|(lo, weights, tail)| {
            let total: f64 = weights.iter().sum();
            let probs: Vec<f64> = weights.iter().map(|w| w / total * (1.0 - tail)).collect();
            PMFTable::new(lo, probs, tail).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn tv_symmetric_and_triangle(
        p in table_strategy(),
        q in table_strategy(),
        r in table_strategy(),
    ) {
        let pq = pmf_core::tv_distance(&p, &q);
        let qp = pmf_core::tv_distance(&q, &p);
        prop_assert!((pq.value - qp.value).abs() < 1e-15);
        prop_assert!((pq.slack - qp.slack).abs() < 1e-15);

        // Triangle up to the summed slacks.
        let pr = pmf_core::tv_distance(&p, &r);
        let rq = pmf_core::tv_distance(&r, &q);
        prop_assert!(
            pq.value <= pr.value + rq.value + pr.slack + rq.slack + pq.slack + 1e-12,
            "{} > {} + {}", pq.value, pr.value, rq.value
        );
    }

    #[test]
    fn convolve_commutative_and_associative(
        p in table_strategy(),
        q in table_strategy(),
        r in table_strategy(),
    ) {
        let pq = pmf_core::convolve(&p, &q, CAP, TRIM).unwrap();
        let qp = pmf_core::convolve(&q, &p, CAP, TRIM).unwrap();
        for x in pq.lo.min(qp.lo)..=pq.hi().max(qp.hi()) {
            prop_assert!((pq.at(x) - qp.at(x)).abs() < 1e-12);
        }
        let pq_r = pmf_core::convolve(&pq, &r, CAP, TRIM).unwrap();
        let qr = pmf_core::convolve(&q, &r, CAP, TRIM).unwrap();
        let p_qr = pmf_core::convolve(&p, &qr, CAP, TRIM).unwrap();
        for x in pq_r.lo.min(p_qr.lo)..=pq_r.hi().max(p_qr.hi()) {
            prop_assert!((pq_r.at(x) - p_qr.at(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn convolve_moments_additive(p in table_strategy(), q in table_strategy()) {
        // Only meaningful with negligible tails.
        let p = PMFTable::new(p.lo, {
            let total: f64 = p.probs.iter().sum();
            p.probs.iter().map(|v| v / total).collect()
        }, 0.0).unwrap();
        let q = PMFTable::new(q.lo, {
            let total: f64 = q.probs.iter().sum();
            q.probs.iter().map(|v| v / total).collect()
        }, 0.0).unwrap();
        let s = pmf_core::convolve(&p, &q, CAP, TRIM).unwrap();
        let (mp, mq, ms) =
            (pmf_core::moments(&p), pmf_core::moments(&q), pmf_core::moments(&s));
        prop_assert!((ms.mean - mp.mean - mq.mean).abs() < 1e-9);
        prop_assert!((ms.variance - mp.variance - mq.variance).abs() < 1e-9);
    }

    #[test]
    fn ratio_of_sums_sandwich(
        pairs in proptest::collection::vec((0.01f64..100.0, 0.01f64..100.0), 1..20)
    ) {
        let num: f64 = pairs.iter().map(|(a, _)| a).sum();
        let den: f64 = pairs.iter().map(|(_, b)| b).sum();
        let ratios: Vec<f64> = pairs.iter().map(|(a, b)| a / b).collect();
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= num / den + 1e-12);
        prop_assert!(num / den <= max + 1e-12);
    }

    #[test]
    fn structural_distance_metric_axioms(
        a in 0.55f64..2.9,
        b in 0.55f64..2.9,
        c in 0.55f64..2.9,
    ) {
        let fam = catalog::geometric_family(0.5, 3.0);
        let w = (0, 60);
        let pa = ParamVector(vec![a]);
        let pb = ParamVector(vec![b]);
        let pc = ParamVector(vec![c]);
        let dab = expfam::structural_distance(&fam, &pa, &pb, w).unwrap();
        let dba = expfam::structural_distance(&fam, &pb, &pa, w).unwrap();
        let daa = expfam::structural_distance(&fam, &pa, &pa, w).unwrap();
        let dac = expfam::structural_distance(&fam, &pa, &pc, w).unwrap();
        let dcb = expfam::structural_distance(&fam, &pc, &pb, w).unwrap();
        prop_assert_eq!(daa, 0.0);
        prop_assert!((dab - dba).abs() <= 1e-9);
        prop_assert!(dab <= dac + dcb + 1e-9, "{} > {} + {}", dab, dac, dcb);
    }
}

#[test]
fn unimodal_shift_identity_randomized() {
    // d_TV(p, p+1) equals the mode mass for unimodal tables.
    let mut rng = SplitRng::seed_from_u64(21);
    let fam = catalog::geometric_family(0.5, 3.0);
    for _ in 0..40 {
        let a = ParamVector(vec![rng.uniform_in(0.5, 3.0)]);
        let t = expfam::pmf_member(&fam, &a, 1e-10).unwrap();
        let (modes, unimodal) = pmf_core::modes_of(&t);
        assert!(unimodal);
        let d = pmf_core::tv_distance(&t, &pmf_core::shift(&t, 1));
        assert!((d.value - t.at(modes[0])).abs() <= d.slack + 1e-12);
    }
}

#[test]
fn mode_rescaling_invariance_randomized() {
    let fam = catalog::disc_gaussian_family(1.5, 1.5, 2.5);
    let mut rng = SplitRng::seed_from_u64(33);
    for _ in 0..30 {
        let a = ParamVector(fam.base_region.sample(&mut rng));
        let base = expfam::mode(&fam, &a).unwrap();
        for _ in 0..4 {
            let t = rng.uniform_in(1.0, 40.0);
            let scaled = ParamVector(a.0.iter().map(|v| v * t).collect());
            assert!(fam.rho_cone_contains(&scaled));
            assert_eq!(expfam::mode(&fam, &scaled).unwrap(), base);
        }
    }
}

#[test]
fn pinsker_covariance_tv_bound_on_hull_pairs() {
    // TV between members is at most ||a - b|| sqrt(Lambda/2) plus slacks.
    for fam in [catalog::geometric_family(0.5, 3.0), catalog::zeta_family(5.5, 9.0)] {
        let mut rng = SplitRng::seed_from_u64(55);
        for _ in 0..25 {
            let a = ParamVector(fam.base_region.sample(&mut rng));
            let b = ParamVector(fam.base_region.sample(&mut rng));
            let ta = expfam::pmf_member(&fam, &a, 1e-10).unwrap();
            let tb = expfam::pmf_member(&fam, &b, 1e-10).unwrap();
            let tv = pmf_core::tv_distance(&ta, &tb);
            let dist: f64 = a
                .0
                .iter()
                .zip(&b.0)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            let bound = dist * (fam.lambda / 2.0).sqrt();
            assert!(
                tv.lower() <= bound + 1e-9,
                "tv {} exceeds Pinsker bound {bound}",
                tv.value
            );
        }
    }
}

#[test]
fn vanishing_deviation_envelope_pointwise() {
    // The pointwise tail envelope holds literally on catalog families: for
    // |x - M| >= ell, pmf(x) <= exp(-kappa max(1, ||a||/rho))
    //                           / |x - M|^(1+eta+s) * pmf(M).
    let cases: Vec<(siirv_lab::ExpFamilySpec, Vec<ParamVector>)> = vec![
        (
            catalog::geometric_family(0.5, 3.0),
            vec![
                ParamVector(vec![0.7]),
                ParamVector(vec![1.5]),
                ParamVector(vec![3.0]),
                ParamVector(vec![6.0]), // rho-cone point beyond the base set
            ],
        ),
        (
            catalog::zeta_family(5.5, 9.0),
            vec![ParamVector(vec![5.5]), ParamVector(vec![7.0]), ParamVector(vec![12.0])],
        ),
        (
            catalog::disc_gaussian_family(1.5, 1.5, 2.5),
            vec![
                ParamVector(vec![0.3, 1.8]),
                ParamVector(vec![-1.2, 2.2]),
                ParamVector(vec![4.0, 5.0]),
            ],
        ),
    ];
    for (fam, params) in cases {
        for (eta, s) in [(0.5f64, 0u8), (0.5, 2), (1.5, 1)] {
            let kappa = 1.0f64;
            let ell = expfam::tail_radius(
                &expfam::TailRadiusParams::new(kappa, eta, s, fam.constants.c_tail).unwrap(),
                fam.b_moment,
            );
            for a in &params {
                let t = expfam::pmf_member(&fam, a, 1e-9).unwrap();
                let modes = expfam::mode(&fam, a).unwrap();
                let mode_mass = t.at(modes[0]);
                let norm = a.norm();
                let envelope_scale = (-kappa * (norm / fam.rho).max(1.0)).exp();
                for x in t.lo..=t.hi() {
                    let dist = modes
                        .iter()
                        .map(|&m| (x - m).abs())
                        .min()
                        .unwrap();
                    if dist < ell {
                        continue;
                    }
                    let envelope =
                        envelope_scale / (dist as f64).powf(1.0 + eta + s as f64) * mode_mass;
                    assert!(
                        t.at(x) <= envelope + 1e-15,
                        "family dim {} a={:?} x={x}: {} > {envelope}",
                        fam.dim(),
                        a.0,
                        t.at(x)
                    );
                }
            }
        }
    }
}

#[test]
fn pmf_member_table_invariants_and_modes_agree() {
    let fams = [
        catalog::geometric_family(0.5, 3.0),
        catalog::disc_gaussian_family(1.5, 1.5, 2.5),
    ];
    let mut rng = SplitRng::seed_from_u64(91);
    for fam in &fams {
        for _ in 0..20 {
            let a = ParamVector(fam.base_region.sample(&mut rng));
            let t = expfam::pmf_member(fam, &a, 1e-8).unwrap();
            // PMFTable invariants re-validated through the constructor.
            PMFTable::new(t.lo, t.probs.clone(), t.tail_bound).unwrap();
            let (modes, unimodal) = pmf_core::modes_of(&t);
            assert!(unimodal);
            assert_eq!(modes, expfam::mode(fam, &a).unwrap());
        }
    }
}

#[test]
fn projection_certificates_on_random_cones() {
    // theta from the cone description certifies the projection contract on
    // generator-sampled points, without retries.
    let mut rng = SplitRng::seed_from_u64(1234);
    for trial in 0..200 {
        let cone = siirv_lab::geometry::testing::random_cone(&mut rng);
        let geom = siirv_lab::geometry::theta_for_cone(&cone).unwrap();
        let u = siirv_lab::geometry::testing::random_cone_point(&cone, &mut rng, 1.0, 1e4);
        let r = 1.0;
        let cert = siirv_lab::geometry::project_to_sphere(&cone, &geom, &u, r)
            .unwrap_or_else(|e| panic!("trial {trial}: {e}"));
        assert_eq!(cert.retries, 0);
        siirv_lab::geometry::testing::assert_certificate(&cone, &geom, &u, r, &cert);
    }
}

#[test]
fn structural_distance_link_after_projection() {
    // After projecting a large-norm parameter to the critical radius, the
    // structural distance stays below exp(-theta r_crit).
    for (fam, window) in [
        (catalog::geometric_family(0.5, 3.0), (0i64, 400i64)),
        (catalog::disc_gaussian_family(1.5, 1.5, 2.5), (-60, 60)),
    ] {
        let theta = fam.resolved_theta();
        let mut rng = SplitRng::seed_from_u64(99);
        for _ in 0..10 {
            // Large-norm direction inside the cone.
            let base = ParamVector(fam.base_region.sample(&mut rng));
            let scale = rng.uniform_in(200.0, 2000.0) / base.norm();
            let a = ParamVector(base.0.iter().map(|v| v * scale).collect());
            assert!(fam.rho_cone_contains(&a));
            let eps = 0.1;
            let b = siirv_lab::geometry::bound_parameter(&fam, &a, eps).unwrap();
            let r_crit = siirv_lab::geometry::critical_radius(
                fam.rho,
                theta,
                fam.b_moment,
                eps,
                fam.constants.c_rcrit,
            );
            assert!((b.norm() - r_crit).abs() <= 1e-6 * r_crit);
            let d = expfam::structural_distance(&fam, &a, &b, window).unwrap();
            assert!(
                d <= (-theta * r_crit).exp() + 1e-9,
                "d_ST {d} > exp(-{theta} * {r_crit})"
            );
        }
    }
}

#[test]
fn cover_points_always_in_rho_cone() {
    for fam in [
        catalog::geometric_family(0.5, 3.0),
        catalog::zeta_family(5.5, 9.0),
        catalog::disc_gaussian_family(1.5, 1.5, 2.5),
    ] {
        let cover = covers::sparsify_family(&fam, 0.2).unwrap();
        for p in &cover.points {
            assert!(fam.rho_cone_contains(p));
        }
    }
}
