//! TIMEX3 `value` grammar.
//!
//! ```text
//! DATE      YYYY | YYYY-MM | YYYY-MM-DD | PAST_REF | PRESENT_REF | FUTURE_REF
//! TIME      YYYY-MM-DD T ( hh[:mm[:ss]] | MO | MI | AF | EV | NI | DT )
//! DURATION  P [nY][nM][nW][nD] [T [nH][nM][nS]]     (at least one part)
//! SET       same shape as DURATION
//! ```
//! `n` is an integer, a decimal, or the TimeML placeholder `X`.

use std::sync::LazyLock;

use chrono::NaiveDate;
use regex::Regex;

use super::TemporalType;

static DATE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d{4})(?:-(\d{2})(?:-(\d{2}))?)?$").unwrap());
static TIME: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(\d{4}-\d{2}-\d{2})T(?:(\d{2})(?::(\d{2})(?::(\d{2}))?)?|MO|MI|AF|EV|NI|DT)$").unwrap()
});
static PERIOD: LazyLock<Regex> = LazyLock::new(|| {
    const N: &str = r"(?:\d+(?:\.\d+)?|X)";
    Regex::new(&format!(
        r"^P(?:{N}Y)?(?:{N}M)?(?:{N}W)?(?:{N}D)?(?:T(?:{N}H)?(?:{N}M)?(?:{N}S)?)?$"
    ))
    .unwrap()
});

const REFS: [&str; 3] = ["PAST_REF", "PRESENT_REF", "FUTURE_REF"];

/// True iff `value` is well-formed for `ttype`.
pub fn validate_value(value: &str, ttype: TemporalType) -> bool {
    match ttype {
        TemporalType::Date => REFS.contains(&value) || is_date_value(value),
        TemporalType::Time => is_time_value(value),
        TemporalType::Duration | TemporalType::Set => is_period_value(value),
    }
}

/// Calendar-valid `YYYY`, `YYYY-MM` or `YYYY-MM-DD`.
pub fn is_date_value(value: &str) -> bool {
    let Some(c) = DATE.captures(value) else {
        return false;
    };
    let year: i32 = c[1].parse().unwrap();
    match (c.get(2), c.get(3)) {
        (None, _) => true,
        (Some(m), None) => matches!(m.as_str().parse::<u32>(), Ok(1..=12)),
        (Some(m), Some(d)) => {
            NaiveDate::from_ymd_opt(year, m.as_str().parse().unwrap(), d.as_str().parse().unwrap()).is_some()
        }
    }
}

fn is_time_value(value: &str) -> bool {
    let Some(c) = TIME.captures(value) else {
        return false;
    };
    if !is_date_value(&c[1]) {
        return false;
    }
    let field = |i: usize, max: u32| {
        c.get(i)
            .is_none_or(|m| m.as_str().parse::<u32>().is_ok_and(|v| v <= max))
    };
    field(2, 24) && field(3, 59) && field(4, 60)
}

fn is_period_value(value: &str) -> bool {
    if !PERIOD.is_match(value) {
        return false;
    }
    // "P", "PT" and "P1DT" carry no component
    let body = &value[1..];
    match body.split_once('T') {
        Some((_, time)) => !time.is_empty(),
        None => !body.is_empty(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use TemporalType::*;

    #[test]
    fn figure_values() {
        assert!(validate_value("P10D", Duration));
        assert!(validate_value("PT30M", Duration));
        assert!(validate_value("PRESENT_REF", Date));
        assert!(validate_value("2013-04-30", Date));
        assert!(validate_value("P1Y", Set));
        assert!(validate_value("2016", Date));
    }

    #[test]
    fn rejects_invalid_dates() {
        assert!(!validate_value("2013-13-01", Date));
        assert!(!validate_value("2013-02-30", Date));
        assert!(!validate_value("2013-00", Date));
        assert!(!validate_value("13-01-01", Date));
        assert!(!validate_value("P1D", Date));
        assert!(validate_value("2012-02-29", Date));
    }

    #[test]
    fn time_needs_clock_part() {
        assert!(validate_value("2013-04-30T14:30", Time));
        assert!(validate_value("2013-04-30T09", Time));
        assert!(validate_value("2013-04-30TMO", Time));
        assert!(!validate_value("2013-04-30", Time));
        assert!(!validate_value("PT30M", Time));
        assert!(!validate_value("2013-04-30T25:00", Time));
        assert!(!validate_value("2013-04-30T10:61", Time));
    }

    #[test]
    fn period_shapes() {
        for ok in ["P1Y2M3DT4H5M6S", "P2W", "PT1.5H", "PXY", "P10D", "PT0S"] {
            assert!(validate_value(ok, Duration), "{ok}");
        }
        for bad in ["P", "PT", "P1DT", "P1H", "1D", "P1D2Y", "p1d", "P-1D"] {
            assert!(!validate_value(bad, Duration), "{bad}");
        }
    }
}
