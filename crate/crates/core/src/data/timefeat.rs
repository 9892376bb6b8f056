use chrono::{Datelike, NaiveDateTime, Timelike};

pub const NUM_TIME_FEATURES: usize = 5;

/// Month, day of month, weekday, hour and minute, each mapped linearly onto
/// `[-0.5, 0.5]`. Returns `len x 5`, row-major.
pub fn time_features(timestamps: &[NaiveDateTime]) -> Vec<f64> {
    let mut out = Vec::with_capacity(timestamps.len() * NUM_TIME_FEATURES);
    for ts in timestamps {
        out.push(f64::from(ts.month0()) / 11.0 - 0.5);
        out.push(f64::from(ts.day0()) / 30.0 - 0.5);
        out.push(f64::from(ts.weekday().num_days_from_monday()) / 6.0 - 0.5);
        out.push(f64::from(ts.hour()) / 23.0 - 0.5);
        out.push(f64::from(ts.minute()) / 59.0 - 0.5);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn at(y: i32, m: u32, d: u32, h: u32, min: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d)
            .unwrap()
            .and_hms_opt(h, min, 0)
            .unwrap()
    }

    #[test]
    fn monday_new_year_midnight_is_all_low() {
        // 2024-01-01 was a Monday.
        let f = time_features(&[at(2024, 1, 1, 0, 0)]);
        assert_eq!(f, vec![-0.5; 5]);
    }

    #[test]
    fn minute_feature_cycles_every_hour_of_quarters() {
        let t0 = at(2024, 3, 1, 0, 0);
        let stamps: Vec<_> = (0..31 * 96).map(|i| t0 + chrono::TimeDelta::minutes(15 * i)).collect();
        let f = time_features(&stamps);
        let minute: Vec<f64> = f.chunks(5).map(|r| r[4]).collect();
        for i in 4..minute.len() {
            assert_eq!(minute[i], minute[i - 4]);
        }
        assert!(minute[..4].windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn features_stay_in_range() {
        let f = time_features(&[at(2023, 12, 31, 23, 59), at(2024, 7, 15, 12, 30)]);
        assert!(f.iter().all(|v| (-0.5..=0.5).contains(v)));
        assert_eq!(&f[..5], &[0.5; 5]);
    }

    #[test]
    fn quarter_hour_step_changes_minute_only() {
        let f = time_features(&[at(2024, 3, 5, 10, 15), at(2024, 3, 5, 10, 30)]);
        for k in 0..4 {
            assert_eq!(f[k], f[5 + k]);
        }
        assert_ne!(f[4], f[9]);
    }
}
