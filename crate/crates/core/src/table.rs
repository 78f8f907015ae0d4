//! Reader for the bundled comma-separated data tables.
//!
//! The tables are written by us and never quote fields, so a row is simply
//! split on commas. The first line is a header and is skipped.

pub(crate) fn rows(text: &str) -> impl Iterator<Item = (usize, alloc::vec::Vec<&str>)> {
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, line)| !line.trim().is_empty() && !line.starts_with('#'))
        .map(|(n, line)| (n + 1, line.split(',').map(str::trim).collect()))
}
