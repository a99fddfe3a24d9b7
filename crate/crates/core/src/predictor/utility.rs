//! Mode-specific systematic utilities.

use crate::data::{Attributes, Mode, Zone};
use crate::error::Result;
use crate::params::SegmentParams;
use crate::scalar::Scalar;

#[inline]
fn coef<T: Scalar>(base: T, nyc: T, is_nyc: bool) -> T {
    if is_nyc {
        base + nyc
    } else {
        base
    }
}

/// Utility of one alternative with its destination constant already resolved.
///
/// NYC interactions switch on with the market's origin. Biking and walking
/// carry no cost term; carpool has travel time and the destination constant only.
pub fn utility_with_dest_asc<T: Scalar>(
    p: &SegmentParams<T>,
    origin_is_nyc: bool,
    mode: Mode,
    dest_asc: T,
    x: &Attributes<T>,
) -> T {
    let auto_tt = coef(p.auto_tt, p.auto_tt_nyc, origin_is_nyc);
    let cost = coef(p.cost, p.cost_nyc, origin_is_nyc);
    let nonauto = coef(p.nonauto_tt, p.nonauto_tt_nyc, origin_is_nyc);
    let v = match mode {
        Mode::Driving => auto_tt * x.tt + cost * x.cost + p.asc_driving,
        Mode::Fhv => auto_tt * x.tt + cost * x.cost + p.asc_fhv,
        Mode::Carpool => auto_tt * x.tt,
        Mode::Transit => {
            coef(p.access, p.access_nyc, origin_is_nyc) * x.access
                + coef(p.egress, p.egress_nyc, origin_is_nyc) * x.egress
                + coef(p.wait, p.wait_nyc, origin_is_nyc) * x.wait
                + coef(p.ivt, p.ivt_nyc, origin_is_nyc) * x.ivt
                + p.transfers * x.transfers
                + cost * x.cost
                + p.asc_transit
        }
        Mode::Biking => nonauto * x.tt + p.asc_biking,
        Mode::Walking => nonauto * x.tt + p.asc_walking,
    };
    v + dest_asc
}

/// Pre-implementation systematic utility.
pub fn systematic_utility<T: Scalar>(
    p: &SegmentParams<T>,
    origin: &Zone,
    mode: Mode,
    destination: &Zone,
    x: &Attributes<T>,
) -> Result<T> {
    let asc = p.dest_asc(&destination.id)?;
    Ok(utility_with_dest_asc(p, origin.is_nyc, mode, asc, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RegionTag;
    use crate::error::Error;
    use approx::assert_abs_diff_eq;

    fn table2_subset() -> SegmentParams<f64> {
        let mut p = SegmentParams::zero();
        p.auto_tt = -0.033;
        p.cost = -0.147;
        p.auto_tt_nyc = -0.017;
        p.cost_nyc = 0.012;
        p.dest_asc.insert("crz".into(), 0.0);
        p
    }

    fn driving(tt: f64, cost: f64) -> Attributes<f64> {
        Attributes {
            tt,
            cost,
            toll_flag: true,
            crz_dest: true,
            ..Default::default()
        }
    }

    #[test]
    fn driving_outside_nyc() {
        let p = table2_subset();
        let v = systematic_utility(
            &p,
            &Zone::new("nassau", RegionTag::NysOther),
            Mode::Driving,
            &Zone::new("crz", RegionTag::Crz),
            &driving(10.0, 2.0),
        )
        .unwrap();
        assert_abs_diff_eq!(v, -0.624, epsilon = 1e-12);
    }

    #[test]
    fn driving_inside_nyc_uses_interactions() {
        let p = table2_subset();
        let v = systematic_utility(
            &p,
            &Zone::new("bk", RegionTag::NycOther),
            Mode::Driving,
            &Zone::new("crz", RegionTag::Crz),
            &driving(10.0, 2.0),
        )
        .unwrap();
        assert_abs_diff_eq!(v, -0.770, epsilon = 1e-12);
    }

    #[test]
    fn zero_parameters_give_zero_utility() {
        let mut p = SegmentParams::<f64>::zero();
        p.dest_asc.insert("crz".into(), 0.0);
        let x = Attributes {
            tt: 30.0,
            cost: 3.0,
            access: 5.0,
            egress: 2.0,
            wait: 4.0,
            ivt: 20.0,
            transfers: 1.0,
            toll_flag: false,
            crz_dest: true,
        };
        for &mode in Mode::ALL {
            assert_eq!(utility_with_dest_asc(&p, true, mode, 0.0, &x), 0.0);
        }
    }

    #[test]
    fn mode_formulas_select_their_terms() {
        let mut p = SegmentParams::<f64>::zero();
        p.auto_tt = -1.0;
        p.cost = -10.0;
        p.nonauto_tt = -100.0;
        p.wait = -1000.0;
        p.transfers = -7.0;
        p.asc_walking = 0.5;
        let x = Attributes {
            tt: 1.0,
            cost: 1.0,
            wait: 1.0,
            transfers: 1.0,
            ..Default::default()
        };
        assert_eq!(utility_with_dest_asc(&p, false, Mode::Carpool, 0.25, &x), -0.75);
        assert_eq!(utility_with_dest_asc(&p, false, Mode::Walking, 0.0, &x), -99.5);
        assert_eq!(utility_with_dest_asc(&p, false, Mode::Biking, 0.0, &x), -100.0);
        assert_eq!(utility_with_dest_asc(&p, false, Mode::Transit, 0.0, &x), -1017.0);
        assert_eq!(utility_with_dest_asc(&p, false, Mode::Fhv, 0.0, &x), -11.0);
    }

    #[test]
    fn missing_destination_constant() {
        let p = SegmentParams::<f64>::zero();
        let err = systematic_utility(
            &p,
            &Zone::new("bk", RegionTag::NycOther),
            Mode::Walking,
            &Zone::new("qns", RegionTag::NycOther),
            &Attributes::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingParameter(name) if name == "asc_dest[qns]"));
    }
}
