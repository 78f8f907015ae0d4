//! Date grammar used by date normalization and coverage classification.
//!
//! | rule | accepted form                              | begin / end             |
//! |------|--------------------------------------------|-------------------------|
//! | D1   | `YYYY`                                     | year / year             |
//! | D2   | `YYYY-MM`, `YYYY-MM-DD`                    | as given                |
//! | D3   | `YYYY-YYYY`, `YYYY – YYYY` (any dash)      | first year / second year|
//! | D4   | `YYYYs` (decade, last digit 0)             | YYYY / YYYY+9           |
//! | D5   | `circa YYYY`, `ca. YYYY`, `c. YYYY`        | year / year             |
//! | D6   | `Month YYYY`, `Month D, YYYY`              | month or day precision  |
//! | D7   | `YYYY-MM-DD/YYYY-MM-DD`                    | first day / second day  |
//!
//! Anything else is unparseable. Ranges whose begin falls after their end
//! are rejected rather than swapped.

use alloc::format;
use alloc::string::String;
use core::cmp::Ordering;

use crate::vocab::Vocabularies;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DateRule {
    Year,
    IsoDate,
    YearRange,
    Decade,
    Circa,
    MonthName,
    DayRange,
}

impl DateRule {
    pub fn id(self) -> &'static str {
        match self {
            DateRule::Year => "D1",
            DateRule::IsoDate => "D2",
            DateRule::YearRange => "D3",
            DateRule::Decade => "D4",
            DateRule::Circa => "D5",
            DateRule::MonthName => "D6",
            DateRule::DayRange => "D7",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedDate {
    pub begin: String,
    pub end: String,
    pub rule: DateRule,
}

/// Parses `input` with the bundled month table.
pub fn parse(input: &str) -> Option<ParsedDate> {
    parse_with(input, Vocabularies::bundled())
}

pub fn parse_with(input: &str, vocab: &Vocabularies) -> Option<ParsedDate> {
    let s = input.trim();
    if s.is_empty() {
        return None;
    }
    day_range(s)
        .or_else(|| iso_date(s))
        .or_else(|| year_range(s))
        .or_else(|| decade(s))
        .or_else(|| circa(s))
        .or_else(|| month_name(s, vocab))
        .or_else(|| year(s).map(|y| same(y, DateRule::Year)))
}

fn same(value: String, rule: DateRule) -> ParsedDate {
    ParsedDate { begin: value.clone(), end: value, rule }
}

fn year(s: &str) -> Option<String> {
    (s.len() == 4 && s.bytes().all(|b| b.is_ascii_digit())).then(|| String::from(s))
}

fn digits<const N: usize>(s: &str) -> Option<u32> {
    (s.len() == N && s.bytes().all(|b| b.is_ascii_digit())).then(|| s.parse().ok())?
}

fn days_in_month(year: u32, month: u32) -> u32 {
    match month {
        4 | 6 | 9 | 11 => 30,
        2 if (year.is_multiple_of(4) && !year.is_multiple_of(100)) || year.is_multiple_of(400) => 29,
        2 => 28,
        _ => 31,
    }
}

/// `YYYY-MM` or `YYYY-MM-DD`, validated.
fn iso(s: &str) -> Option<String> {
    let mut parts = s.split('-');
    let y = digits::<4>(parts.next()?)?;
    let m = digits::<2>(parts.next()?)?;
    if !(1..=12).contains(&m) {
        return None;
    }
    match parts.next() {
        None => Some(format!("{y:04}-{m:02}")),
        Some(d) => {
            let d = digits::<2>(d)?;
            if parts.next().is_some() || d == 0 || d > days_in_month(y, m) {
                return None;
            }
            Some(format!("{y:04}-{m:02}-{d:02}"))
        }
    }
}

fn iso_date(s: &str) -> Option<ParsedDate> {
    iso(s).map(|v| same(v, DateRule::IsoDate))
}

fn day_range(s: &str) -> Option<ParsedDate> {
    let (a, b) = s.split_once('/')?;
    let (a, b) = (a.trim(), b.trim());
    if a.len() != 10 || b.len() != 10 {
        return None;
    }
    let (begin, end) = (iso(a)?, iso(b)?);
    ordered(begin, end, DateRule::DayRange)
}

fn year_range(s: &str) -> Option<ParsedDate> {
    let (a, b) = s.split_once(['-', '\u{2013}', '\u{2014}'])?;
    let (begin, end) = (year(a.trim())?, year(b.trim())?);
    ordered(begin, end, DateRule::YearRange)
}

fn decade(s: &str) -> Option<ParsedDate> {
    let y = s.strip_suffix('s')?;
    let start = digits::<4>(y)?;
    if start % 10 != 0 {
        return None;
    }
    Some(ParsedDate { begin: format!("{start:04}"), end: format!("{:04}", start + 9), rule: DateRule::Decade })
}

fn circa(s: &str) -> Option<ParsedDate> {
    let lower = s.to_ascii_lowercase();
    let rest = ["circa ", "ca.", "c."]
        .iter()
        .find_map(|prefix| lower.strip_prefix(prefix))?;
    year(rest.trim_start()).map(|y| same(y, DateRule::Circa))
}

fn month_name(s: &str, vocab: &Vocabularies) -> Option<ParsedDate> {
    let (month_word, rest) = s.split_once(char::is_whitespace)?;
    let m = u32::from(vocab.month(month_word)?);
    let rest = rest.trim();
    if let Some(y) = year(rest) {
        return Some(same(format!("{y}-{m:02}"), DateRule::MonthName));
    }
    let (day, y) = rest.split_once(',').or_else(|| rest.split_once(char::is_whitespace))?;
    let y = digits::<4>(y.trim())?;
    let day = day.trim();
    if day.is_empty() || day.len() > 2 || !day.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let d: u32 = day.parse().ok()?;
    if d == 0 || d > days_in_month(y, m) {
        return None;
    }
    Some(same(format!("{y:04}-{m:02}-{d:02}"), DateRule::MonthName))
}

fn ordered(begin: String, end: String, rule: DateRule) -> Option<ParsedDate> {
    (compare(&begin, &end) != Ordering::Greater).then_some(ParsedDate { begin, end, rule })
}

/// Chronological comparison of two ISO dates of possibly different
/// precision, performed at their coarsest shared precision: `1935` and
/// `1935-06` compare equal.
pub fn compare(a: &str, b: &str) -> Ordering {
    let n = a.len().min(b.len());
    a[..n].cmp(&b[..n])
}
