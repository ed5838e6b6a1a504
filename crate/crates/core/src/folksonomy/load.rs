use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::Assignment;
use crate::error::{Error, Result};

/// Whether the first line of a TSV file is a header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeaderMode {
    #[default]
    Auto,
    Present,
    Absent,
}

/// Zero-based column indices of the user, tag and item fields. Other
/// columns (timestamps and the like) are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnMapping {
    pub user: usize,
    pub tag: usize,
    pub item: usize,
    pub header: HeaderMode,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            user: 0,
            tag: 1,
            item: 2,
            header: HeaderMode::Auto,
        }
    }
}

impl ColumnMapping {
    /// Layout of HetRec 2011 `user_taggedbookmarks*.dat`:
    /// `userID  bookmarkID  tagID  ...`.
    pub fn hetrec_delicious() -> Self {
        ColumnMapping {
            user: 0,
            tag: 2,
            item: 1,
            header: HeaderMode::Auto,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.user == self.tag || self.user == self.item || self.tag == self.item {
            return Err(Error::Config(format!(
                "column mapping must use three distinct columns, got user={} tag={} item={}",
                self.user, self.tag, self.item
            )));
        }
        Ok(())
    }

    fn arity(&self) -> usize {
        self.user.max(self.tag).max(self.item) + 1
    }

    fn extract<'a>(&self, fields: &[&'a str]) -> Option<(&'a str, &'a str, &'a str)> {
        if fields.len() < self.arity() {
            return None;
        }
        let (u, t, d) = (fields[self.user], fields[self.tag], fields[self.item]);
        (!u.is_empty() && !t.is_empty() && !d.is_empty()).then_some((u, t, d))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedRow {
    /// 1-based line number in the input.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedAssignments {
    pub assignments: Vec<Assignment>,
    pub malformed: Vec<MalformedRow>,
    pub header_skipped: bool,
}

/// Reads a tab-separated assignment file.
pub fn load_assignments(path: &Path, mapping: ColumnMapping) -> Result<LoadedAssignments> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_assignments(BufReader::new(file), mapping).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses assignments from any buffered reader. Rows with missing or empty
/// configured columns are collected in `malformed`; more than 10% malformed
/// data rows is fatal.
pub fn parse_assignments<R: BufRead>(reader: R, mapping: ColumnMapping) -> Result<LoadedAssignments> {
    mapping.validate()?;
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line.map_err(|e| Error::io("<input>", e))?);
    }
    let lines: Vec<&str> = lines.iter().map(|l| l.trim_end_matches('\r')).collect();

    let header_skipped = match mapping.header {
        HeaderMode::Present => !lines.is_empty(),
        HeaderMode::Absent => false,
        HeaderMode::Auto => looks_like_header(&lines, &mapping),
    };

    let mut out = LoadedAssignments {
        header_skipped,
        ..Default::default()
    };
    let mut data_rows = 0usize;
    for (idx, line) in lines.iter().enumerate().skip(usize::from(header_skipped)) {
        if line.trim().is_empty() {
            continue;
        }
        data_rows += 1;
        let fields: Vec<&str> = line.split('\t').collect();
        match mapping.extract(&fields) {
            Some((u, t, d)) => out.assignments.push(Assignment::new(u, t, d)),
            None => out.malformed.push(MalformedRow {
                line: idx + 1,
                reason: if fields.len() < mapping.arity() {
                    format!("expected at least {} columns, found {}", mapping.arity(), fields.len())
                } else {
                    "empty identifier".to_owned()
                },
            }),
        }
    }

    if out.malformed.len() * 10 > data_rows {
        let first = &out.malformed[0];
        return Err(Error::Data(format!(
            "{} of {} rows malformed (first at line {}: {})",
            out.malformed.len(),
            data_rows,
            first.line,
            first.reason
        )));
    }
    for m in &out.malformed {
        log::warn!("skipping malformed line {}: {}", m.line, m.reason);
    }
    Ok(out)
}

const HEADER_WORDS: &[&str] = &[
    "user", "userid", "user_id", "tag", "tagid", "tag_id", "item", "itemid", "item_id",
    "bookmark", "bookmarkid", "bookmark_id", "resource", "resourceid", "url", "urlid",
];

/// The first line is a header if one of its configured fields is a known
/// column name, or is non-numeric where the second line holds a number.
fn looks_like_header(lines: &[&str], mapping: &ColumnMapping) -> bool {
    let Some(first) = lines.first() else {
        return false;
    };
    let first: Vec<&str> = first.split('\t').collect();
    let cols = [mapping.user, mapping.tag, mapping.item];
    let named = cols.iter().any(|&c| {
        first
            .get(c)
            .is_some_and(|f| HEADER_WORDS.contains(&f.trim().to_ascii_lowercase().as_str()))
    });
    if named {
        return true;
    }
    let Some(second) = lines.get(1) else {
        return false;
    };
    let second: Vec<&str> = second.split('\t').collect();
    cols.iter().any(|&c| match (first.get(c), second.get(c)) {
        (Some(a), Some(b)) => a.parse::<i64>().is_err() && b.parse::<i64>().is_ok(),
        _ => false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, mapping: ColumnMapping) -> Result<LoadedAssignments> {
        parse_assignments(text.as_bytes(), mapping)
    }

    #[test]
    fn three_rows() {
        let got = parse("u1\tt1\td1\nu1\tt2\td1\nu2\tt1\td2\n", ColumnMapping::default()).unwrap();
        assert_eq!(got.assignments.len(), 3);
        assert_eq!(got.assignments[2], Assignment::new("u2", "t1", "d2"));
        assert!(!got.header_skipped);
    }

    #[test]
    fn header_only_is_empty() {
        let got = parse("user\ttag\titem\n", ColumnMapping::default()).unwrap();
        assert!(got.assignments.is_empty());
        assert!(got.header_skipped);
    }

    #[test]
    fn hetrec_layout_with_numeric_contrast() {
        let text = "userID\tbookmarkID\ttagID\ttimestamp\n8\t1\t1\t1289255362000\n8\t2\t1\t1289255159000\n";
        let got = parse(text, ColumnMapping::hetrec_delicious()).unwrap();
        assert!(got.header_skipped);
        assert_eq!(got.assignments[1], Assignment::new("8", "1", "2"));

        let text = "uid\tbid\ttid\n8\t1\t1\n";
        assert!(parse(text, ColumnMapping::hetrec_delicious()).unwrap().header_skipped);
    }

    #[test]
    fn forced_header_modes() {
        let m = ColumnMapping {
            header: HeaderMode::Present,
            ..Default::default()
        };
        assert_eq!(parse("a\tb\tc\nd\te\tf\n", m).unwrap().assignments.len(), 1);
        let m = ColumnMapping {
            header: HeaderMode::Absent,
            ..Default::default()
        };
        assert_eq!(parse("user\ttag\titem\n", m).unwrap().assignments.len(), 1);
    }

    #[test]
    fn malformed_rows_are_collected() {
        let mut text = String::new();
        for i in 0..20 {
            text.push_str(&format!("u{i}\tt\td\n"));
        }
        text.push_str("broken\trow\n");
        let got = parse(&text, ColumnMapping::default()).unwrap();
        assert_eq!(got.assignments.len(), 20);
        assert_eq!(got.malformed, vec![MalformedRow { line: 21, reason: "expected at least 3 columns, found 2".into() }]);
    }

    #[test]
    fn too_many_malformed_rows_is_fatal() {
        let text = "u\tt\td\nbad\nu2\tt\t\n";
        assert!(matches!(parse(text, ColumnMapping::default()), Err(Error::Data(_))));
    }

    #[test]
    fn mapping_must_be_distinct() {
        let m = ColumnMapping { user: 0, tag: 0, item: 1, header: HeaderMode::Auto };
        assert!(matches!(parse("", m), Err(Error::Config(_))));
    }

    #[test]
    fn missing_file() {
        let err = load_assignments(Path::new("/nonexistent/x.tsv"), ColumnMapping::default()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
