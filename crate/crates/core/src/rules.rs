//! Small deterministic normalizer over a pattern table.
//!
//! The table lives in `resources/rules.json`. Each rule is a regex matched
//! against the whole lowercased expression, a list of TIMEX3 types it applies
//! to, and an operation that builds the value. Relative operations anchor on
//! the most recent full date among the previous values, then on the DCT.

use std::sync::LazyLock;

use chrono::{Datelike, Days, Months, NaiveDate, Weekday};
use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::corpus::{validate_value, RealizationClass, TemporalType};

pub const RULE_TABLE: &str = include_str!("../resources/rules.json");

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnchorContext {
    pub dct: Option<NaiveDate>,
    /// Values seen before the expression, most recent last.
    pub previous_values: Vec<String>,
}

impl AnchorContext {
    pub fn new(dct: NaiveDate) -> Self {
        AnchorContext {
            dct: Some(dct),
            previous_values: Vec::new(),
        }
    }

    /// Most recent previous value that starts with a full date, else the DCT.
    pub fn anchor(&self) -> Option<NaiveDate> {
        self.previous_values
            .iter()
            .rev()
            .find_map(|v| v.get(..10).and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok()))
            .or(self.dct)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Op {
    Literal,
    Date,
    MonthDay,
    RelativeDay,
    RelativeMonth,
    RelativeYear,
    NamedMonth,
    Weekday,
    Shift,
    Period,
    PartOfDay,
    Clock,
}

impl Op {
    fn needs_anchor(self) -> bool {
        !matches!(self, Op::Literal | Op::Date | Op::Period)
    }
}

/// One entry of the pattern table, as stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub id: String,
    pub pattern: String,
    pub types: Vec<TemporalType>,
    pub op: Op,
    #[serde(default)]
    pub template: Option<String>,
    #[serde(default)]
    pub offset: i64,
}

#[derive(Debug, Clone, Deserialize)]
struct RuleFile {
    version: u32,
    macros: std::collections::BTreeMap<String, String>,
    rules: Vec<RuleSpec>,
}

#[derive(Debug)]
pub struct Rule {
    pub spec: RuleSpec,
    regex: Regex,
}

impl Rule {
    pub fn is_match(&self, text: &str) -> bool {
        self.regex.is_match(text)
    }
}

pub struct RuleTable {
    pub version: u32,
    pub rules: Vec<Rule>,
}

static TABLE: LazyLock<RuleTable> =
    LazyLock::new(|| RuleTable::parse(RULE_TABLE).expect("bundled rule table is valid"));

impl RuleTable {
    pub fn parse(json: &str) -> Result<Self, String> {
        let file: RuleFile = serde_json::from_str(json).map_err(|e| e.to_string())?;
        let mut rules = Vec::with_capacity(file.rules.len());
        for spec in file.rules {
            let mut pattern = spec.pattern.clone();
            for (name, body) in &file.macros {
                pattern = pattern.replace(&format!("{{{name}}}"), body);
            }
            let regex = Regex::new(&format!("^(?i:{pattern})$")).map_err(|e| format!("rule {}: {e}", spec.id))?;
            rules.push(Rule { spec, regex });
        }
        Ok(RuleTable {
            version: file.version,
            rules,
        })
    }

    pub fn bundled() -> &'static RuleTable {
        &TABLE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionPath {
    /// Fully determined by the expression itself.
    Explicit,
    /// Mapped to one of the `*_REF` values.
    Vague,
    /// Computed from the anchor date.
    Anchored,
    /// A rule matched but no anchor was available.
    MissingAnchor,
    /// No rule matched.
    Unmatched,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    /// `None` means unresolvable.
    pub value: Option<String>,
    pub path: ResolutionPath,
    pub rule: Option<String>,
}

impl Resolution {
    fn unmatched() -> Self {
        Resolution {
            value: None,
            path: ResolutionPath::Unmatched,
            rule: None,
        }
    }
}

fn clean(text: &str) -> String {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    words.join(" ").trim_end_matches([',', ';', ':']).to_string()
}

/// Normalize one expression with the bundled table.
pub fn normalize(text: &str, ttype: TemporalType, anchor: &AnchorContext) -> Resolution {
    normalize_with(RuleTable::bundled(), text, ttype, anchor)
}

pub fn normalize_with(table: &RuleTable, text: &str, ttype: TemporalType, anchor: &AnchorContext) -> Resolution {
    let text = clean(text);
    let anchor_date = anchor.anchor();
    let mut missing_anchor: Option<&str> = None;
    for rule in &table.rules {
        if !rule.spec.types.contains(&ttype) {
            continue;
        }
        let Some(caps) = rule.regex.captures(&text) else {
            continue;
        };
        if rule.spec.op.needs_anchor() && anchor_date.is_none() {
            missing_anchor.get_or_insert(&rule.spec.id);
            continue;
        }
        let Some(value) = apply(&rule.spec, &caps, anchor_date) else {
            continue;
        };
        // a rule never emits a value its type would reject
        if !validate_value(&value, ttype) {
            log::debug!("rule {} produced invalid {ttype} value {value}", rule.spec.id);
            continue;
        }
        let path = if value.ends_with("_REF") {
            ResolutionPath::Vague
        } else if rule.spec.op.needs_anchor() {
            ResolutionPath::Anchored
        } else {
            ResolutionPath::Explicit
        };
        return Resolution {
            value: Some(value),
            path,
            rule: Some(rule.spec.id.clone()),
        };
    }
    match missing_anchor {
        Some(id) => Resolution {
            value: None,
            path: ResolutionPath::MissingAnchor,
            rule: Some(id.to_string()),
        },
        None => Resolution::unmatched(),
    }
}

/// Heuristic realization class from how an expression was resolved.
pub fn classify_realization(_text: &str, _ttype: TemporalType, resolution: &Resolution) -> RealizationClass {
    match resolution.path {
        ResolutionPath::Explicit => RealizationClass::Explicit,
        ResolutionPath::Vague => RealizationClass::Vague,
        ResolutionPath::Anchored => RealizationClass::Relative,
        ResolutionPath::MissingAnchor => RealizationClass::UnderSpecified,
        ResolutionPath::Unmatched => RealizationClass::Implicit,
    }
}

fn month_number(name: &str) -> Option<u32> {
    const MONTHS: [&str; 12] = [
        "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
    ];
    let key = name.trim_end_matches('.').get(..3)?.to_lowercase();
    MONTHS.iter().position(|m| *m == key).map(|i| i as u32 + 1)
}

fn weekday(name: &str) -> Option<Weekday> {
    name.parse().ok()
}

/// Number as written in the value: digits are kept, words become integers.
fn number(s: &str) -> Option<String> {
    const WORDS: [&str; 12] = [
        "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    ];
    let s = s.to_lowercase();
    if s == "a" || s == "an" {
        return Some("1".into());
    }
    if let Some(i) = WORDS.iter().position(|w| *w == s) {
        return Some((i + 1).to_string());
    }
    if s.chars().all(|c| c.is_ascii_digit() || c == '.') && !s.is_empty() {
        let trimmed = s.trim_start_matches('0');
        return Some(if trimmed.is_empty() || trimmed.starts_with('.') {
            format!("0{trimmed}")
        } else {
            trimmed.to_string()
        });
    }
    None
}

fn period(n: &str, unit: &str) -> Option<String> {
    let unit = unit.to_lowercase();
    Some(match unit.trim_end_matches('s') {
        "year" => format!("P{n}Y"),
        "month" => format!("P{n}M"),
        "week" => format!("P{n}W"),
        "day" => format!("P{n}D"),
        "hour" => format!("PT{n}H"),
        "minute" => format!("PT{n}M"),
        "second" => format!("PT{n}S"),
        "decade" => {
            let years: f64 = n.parse().ok()?;
            format!("P{}Y", years * 10.0)
        }
        _ => return None,
    })
}

fn ymd(d: NaiveDate) -> String {
    d.format("%Y-%m-%d").to_string()
}

fn ym(d: NaiveDate) -> String {
    d.format("%Y-%m").to_string()
}

fn add_days(d: NaiveDate, n: i64) -> Option<NaiveDate> {
    if n >= 0 {
        d.checked_add_days(Days::new(n as u64))
    } else {
        d.checked_sub_days(Days::new(n.unsigned_abs()))
    }
}

fn add_months(d: NaiveDate, n: i64) -> Option<NaiveDate> {
    let first = d.with_day(1)?;
    if n >= 0 {
        first.checked_add_months(Months::new(n as u32))
    } else {
        first.checked_sub_months(Months::new(n.unsigned_abs() as u32))
    }
}

fn year_of(y: i32) -> Option<String> {
    (0..=9999).contains(&y).then(|| format!("{y:04}"))
}

fn apply(spec: &RuleSpec, caps: &Captures, anchor: Option<NaiveDate>) -> Option<String> {
    let get = |name: &str| caps.name(name).map(|m| m.as_str());
    let int = |name: &str| get(name).and_then(|s| s.parse::<u32>().ok());
    match spec.op {
        Op::Literal => spec.template.clone(),
        Op::Date => {
            let y = get("y")?;
            let m = int("m").or_else(|| get("month").and_then(month_number));
            match (m, int("d")) {
                (Some(m), Some(d)) => NaiveDate::from_ymd_opt(y.parse().ok()?, m, d).map(ymd),
                (Some(m), None) => Some(format!("{y}-{m:02}")),
                (None, _) => Some(y.to_string()),
            }
        }
        Op::MonthDay => {
            let a = anchor?;
            NaiveDate::from_ymd_opt(a.year(), get("month").and_then(month_number)?, int("d")?).map(ymd)
        }
        Op::RelativeDay => add_days(anchor?, spec.offset).map(ymd),
        Op::RelativeMonth => add_months(anchor?, spec.offset).map(ym),
        Op::RelativeYear => year_of(anchor?.year() + spec.offset as i32),
        Op::NamedMonth => {
            let a = anchor?;
            let m = get("month").and_then(month_number)?;
            let year = match spec.offset {
                0 => a.year(),
                o if o < 0 => a.year() - i32::from(m >= a.month()),
                _ => a.year() + i32::from(m <= a.month()),
            };
            Some(format!("{}-{m:02}", year_of(year)?))
        }
        Op::Weekday => {
            let a = anchor?;
            let target = weekday(get("weekday")?)?;
            let step = spec.offset.signum();
            (1..=7)
                .filter_map(|i| add_days(a, step * i))
                .find(|d| d.weekday() == target)
                .map(ymd)
        }
        Op::Shift => {
            let a = anchor?;
            let n: i64 = number(get("n")?)?.parse().ok()?;
            let n = n * spec.offset.signum();
            let unit = get("unit")?.to_lowercase();
            match unit.trim_end_matches('s') {
                "day" => add_days(a, n).map(ymd),
                "week" => add_days(a, 7 * n).map(ymd),
                "month" => add_months(a, n).map(ym),
                "year" => year_of(a.year() + n as i32),
                "decade" => year_of(a.year() + 10 * n as i32),
                _ => None,
            }
        }
        Op::Period => period(&number(get("n").unwrap_or("1"))?, get("unit")?),
        Op::PartOfDay => {
            let day = add_days(anchor?, spec.offset)?;
            let code = match (spec.template.as_deref(), get("pod")) {
                (Some(t), _) => t.to_string(),
                (None, Some("morning")) => "MO".into(),
                (None, Some("afternoon")) => "AF".into(),
                (None, Some("evening")) => "EV".into(),
                _ => return None,
            };
            Some(format!("{}T{code}", ymd(day)))
        }
        Op::Clock => {
            let day = ymd(anchor?);
            if let Some(t) = &spec.template {
                return Some(format!("{day}T{t}"));
            }
            let mut h = int("h")?;
            let min = int("min").unwrap_or(0);
            if let Some(ampm) = get("ampm") {
                if !(1..=12).contains(&h) {
                    return None;
                }
                let pm = ampm.to_lowercase().starts_with('p');
                h = match (h, pm) {
                    (12, false) => 0,
                    (12, true) => 12,
                    (h, true) => h + 12,
                    (h, false) => h,
                };
            }
            (h <= 23 && min <= 59).then(|| format!("{day}T{h:02}:{min:02}"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn norm(text: &str, ttype: TemporalType, dct: &str, prev: &[&str]) -> Option<String> {
        let anchor = AnchorContext {
            dct: Some(d(dct)),
            previous_values: prev.iter().map(|s| s.to_string()).collect(),
        };
        normalize(text, ttype, &anchor).value
    }

    use TemporalType::*;

    #[test]
    fn table_loads_and_has_about_forty_rules() {
        let t = RuleTable::bundled();
        assert_eq!(t.version, 1);
        assert!(t.rules.len() >= 40, "{}", t.rules.len());
    }

    #[test]
    fn explicit_dates() {
        assert_eq!(
            norm("30 April 2013", Date, "2000-01-01", &[]).as_deref(),
            Some("2013-04-30")
        );
        assert_eq!(
            norm("April 30, 2013", Date, "2000-01-01", &[]).as_deref(),
            Some("2013-04-30")
        );
        assert_eq!(norm("May 2014", Date, "2000-01-01", &[]).as_deref(), Some("2014-05"));
        assert_eq!(norm("31 February 2013", Date, "2000-01-01", &[]), None);
    }

    #[test]
    fn relative_prefers_previous_value() {
        assert_eq!(
            norm("the following day", Date, "2014-05-01", &["2013-04-30", "2014-05-08"]).as_deref(),
            Some("2014-05-09")
        );
        assert_eq!(
            norm("yesterday", Date, "2014-03-01", &["2014", "P1Y"]).as_deref(),
            Some("2014-02-28")
        );
        assert_eq!(norm("last year", Date, "2014-03-01", &[]).as_deref(), Some("2013"));
        assert_eq!(norm("next month", Date, "2014-12-31", &[]).as_deref(), Some("2015-01"));
        assert_eq!(norm("last May", Date, "2014-05-20", &[]).as_deref(), Some("2013-05"));
        assert_eq!(
            norm("next friday", Date, "2024-01-05", &[]).as_deref(),
            Some("2024-01-12")
        );
        assert_eq!(
            norm("three weeks ago", Date, "2024-01-22", &[]).as_deref(),
            Some("2024-01-01")
        );
    }

    #[test]
    fn durations_sets_times() {
        assert_eq!(
            norm("nine more days", Duration, "2000-01-01", &[]).as_deref(),
            Some("P9D")
        );
        assert_eq!(
            norm("10 more days", Duration, "2000-01-01", &[]).as_deref(),
            Some("P10D")
        );
        assert_eq!(
            norm("the past two decades", Duration, "2000-01-01", &[]).as_deref(),
            Some("P20Y")
        );
        assert_eq!(norm("every 3 days", Set, "2000-01-01", &[]).as_deref(), Some("P3D"));
        assert_eq!(
            norm("3:30 pm", Time, "2000-01-01", &[]).as_deref(),
            Some("2000-01-01T15:30")
        );
        assert_eq!(
            norm("this morning", Time, "2000-01-01", &[]).as_deref(),
            Some("2000-01-01TMO")
        );
    }

    #[test]
    fn unresolvable_and_classes() {
        let r = normalize("Easter 2024", Date, &AnchorContext::new(d("2024-01-01")));
        assert_eq!(r.value, None);
        assert_eq!(
            classify_realization("Easter 2024", Date, &r),
            RealizationClass::Implicit
        );

        let r = normalize("now", Date, &AnchorContext::default());
        assert_eq!(classify_realization("now", Date, &r), RealizationClass::Vague);

        let r = normalize("the following day", Date, &AnchorContext::default());
        assert_eq!(r.value, None);
        assert_eq!(
            classify_realization("the following day", Date, &r),
            RealizationClass::UnderSpecified
        );

        let r = normalize("30 April 2013", Date, &AnchorContext::default());
        assert_eq!(
            classify_realization("30 April 2013", Date, &r),
            RealizationClass::Explicit
        );
    }

    #[test]
    fn every_rule_output_validates() {
        let samples = [
            ("2013-04-30", Date),
            ("1st of May 2013", Date),
            ("the day after tomorrow", Date),
            ("12 March", Date),
            ("this year", Date),
            ("last night", Time),
            ("noon", Time),
            ("an hour", Duration),
            ("ten-day", Duration),
            ("hourly", Set),
        ];
        let anchor = AnchorContext::new(d("2020-02-29"));
        for (text, ttype) in samples {
            let r = normalize(text, ttype, &anchor);
            let v = r.value.unwrap_or_else(|| panic!("{text} unresolved"));
            assert!(validate_value(&v, ttype), "{text} -> {v}");
        }
    }
}
