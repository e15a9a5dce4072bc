//! Bars-and-stripes patterns and OptDigits ingestion into 64-unit Ising
//! patterns: 56 pixel spins (8 rows x 7 columns, row-major) followed by 8
//! one-hot label spins.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rbm::Spin;

pub const IMAGE_SIDE: usize = 8;
pub const PIXEL_COLS: usize = 7;
pub const PIXEL_UNITS: usize = IMAGE_SIDE * PIXEL_COLS;
pub const CLASSES: usize = 8;
pub const PATTERN_UNITS: usize = PIXEL_UNITS + CLASSES;
pub const MAX_PIXEL: u8 = 16;

/// One OptDigits sample: 8x8 pixel counts in `[0, 16]`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigitRecord {
    pub pixels: [u8; 64],
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRecord {
    pub visible: Vec<Spin>,
    pub class: u8,
}

impl PatternRecord {
    pub fn pixels(&self) -> &[Spin] {
        &self.visible[..PIXEL_UNITS]
    }

    pub fn label_spins(&self) -> &[Spin] {
        &self.visible[PIXEL_UNITS..]
    }

    pub fn validate(&self) -> Result<()> {
        if self.visible.len() != PATTERN_UNITS {
            return Err(Error::Shape(format!(
                "pattern has {} units, expected {PATTERN_UNITS}",
                self.visible.len()
            )));
        }
        if self.visible.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Domain("pattern contains a non-spin value".into()));
        }
        if usize::from(self.class) >= CLASSES {
            return Err(Error::Range(format!(
                "class {} outside 0..{CLASSES}",
                self.class
            )));
        }
        if label_spins(self.class) != self.label_spins() {
            return Err(Error::Domain(format!(
                "label spins do not encode class {}",
                self.class
            )));
        }
        Ok(())
    }
}

/// One-hot label: +1 at position `class`, -1 elsewhere.
pub fn label_spins(class: u8) -> Vec<Spin> {
    (0..CLASSES)
        .map(|k| if k == usize::from(class) { 1 } else { -1 })
        .collect()
}

/// Visible indices of the label units.
pub fn label_units() -> Vec<usize> {
    (PIXEL_UNITS..PATTERN_UNITS).collect()
}

/// Every n x n pattern with all rows constant or all columns constant.
/// Stripes come first, ordered by the row mask (bit r set: row r is +1),
/// then bars by column mask, skipping the two uniform patterns already
/// listed. Yields `2^(n+1) - 2` patterns.
pub fn gen_bas(n: usize) -> Result<Vec<Vec<Spin>>> {
    if n == 0 || n > 16 {
        return Err(Error::Domain(format!(
            "bars-and-stripes side must lie in 1..=16, got {n}"
        )));
    }
    let bit = |mask: usize, k: usize| -> Spin {
        if mask >> k & 1 == 1 {
            1
        } else {
            -1
        }
    };
    let full = (1usize << n) - 1;
    let mut out = Vec::with_capacity(2 << n);
    for mask in 0..=full {
        out.push((0..n * n).map(|p| bit(mask, p / n)).collect());
    }
    for mask in 1..full {
        out.push((0..n * n).map(|p| bit(mask, p % n)).collect());
    }
    Ok(out)
}

/// Parses UCI optdigits text: 64 pixel counts then the label per line.
/// Blank lines are skipped.
pub fn parse_optdigits<R: BufRead>(input: R, path: &Path) -> Result<Vec<DigitRecord>> {
    let mut out = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 65 {
            return Err(parse_err(format!(
                "expected 65 fields, found {}",
                fields.len()
            )));
        }
        let mut values = [0u8; 65];
        for (slot, f) in values.iter_mut().zip(&fields) {
            *slot = f
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("{f:?} is not a nonnegative integer")))?;
        }
        let mut pixels = [0u8; 64];
        pixels.copy_from_slice(&values[..64]);
        if let Some(p) = pixels.iter().find(|&&p| p > MAX_PIXEL) {
            return Err(Error::Range(format!(
                "{}:{line_no}: pixel value {p} exceeds {MAX_PIXEL}",
                path.display()
            )));
        }
        let label = values[64];
        if label > 9 {
            return Err(Error::Range(format!(
                "{}:{line_no}: label {label} exceeds 9",
                path.display()
            )));
        }
        out.push(DigitRecord { pixels, label });
    }
    Ok(out)
}

pub fn load_optdigits(path: impl AsRef<Path>) -> Result<Vec<DigitRecord>> {
    let path = path.as_ref();
    parse_optdigits(BufReader::new(File::open(path)?), path)
}

/// How the 8x8 image loses one column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "kebab-case")]
pub enum ColumnReduction {
    #[default]
    DropRight,
    DropLeft,
    /// Columns 6 and 7 merge into their pixelwise maximum.
    MergeMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default)]
pub struct PreprocessOptions {
    /// Pixels at or above this count become +1.
    pub threshold: u8,
    pub train_count: usize,
    pub test_count: usize,
    pub columns: ColumnReduction,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            threshold: 8,
            train_count: 1024,
            test_count: 440,
            columns: ColumnReduction::DropRight,
        }
    }
}

/// Binarized 8x7 pixels plus the one-hot label. `record.label` must be < 8.
pub fn to_pattern(record: &DigitRecord, opts: &PreprocessOptions) -> Result<PatternRecord> {
    if record.label as usize >= CLASSES {
        return Err(Error::Range(format!(
            "label {} has no label unit",
            record.label
        )));
    }
    let mut visible = Vec::with_capacity(PATTERN_UNITS);
    for row in record.pixels.chunks(IMAGE_SIDE) {
        let kept: [u8; PIXEL_COLS] = match opts.columns {
            ColumnReduction::DropRight => std::array::from_fn(|c| row[c]),
            ColumnReduction::DropLeft => std::array::from_fn(|c| row[c + 1]),
            ColumnReduction::MergeMax => {
                std::array::from_fn(|c| if c == 6 { row[6].max(row[7]) } else { row[c] })
            }
        };
        visible.extend(
            kept.iter()
                .map(|&p| if p >= opts.threshold { 1 } else { -1 }),
        );
    }
    visible.extend(label_spins(record.label));
    Ok(PatternRecord {
        visible,
        class: record.label,
    })
}

/// Picks `count` records with labels below 8: classes take turns in
/// ascending order, each contributing its next record in file order, and a
/// class that runs out drops out of the rotation. The picks are returned in
/// file order.
pub fn select_balanced(records: &[DigitRecord], count: usize) -> Result<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CLASSES];
    for (k, r) in records.iter().enumerate() {
        if (r.label as usize) < CLASSES {
            by_class[r.label as usize].push(k);
        }
    }
    let available: usize = by_class.iter().map(Vec::len).sum();
    if available < count {
        return Err(Error::Capacity(format!(
            "{count} patterns requested but only {available} records have labels 0-7"
        )));
    }
    let mut cursor = [0usize; CLASSES];
    let mut picks = Vec::with_capacity(count);
    while picks.len() < count {
        for class in 0..CLASSES {
            if picks.len() == count {
                break;
            }
            if let Some(&k) = by_class[class].get(cursor[class]) {
                picks.push(k);
                cursor[class] += 1;
            }
        }
    }
    picks.sort_unstable();
    Ok(picks)
}

/// Training and test patterns from the two OptDigits files.
pub fn preprocess(
    train_records: &[DigitRecord],
    test_records: &[DigitRecord],
    opts: &PreprocessOptions,
) -> Result<(Vec<PatternRecord>, Vec<PatternRecord>)> {
    if !(1..=MAX_PIXEL).contains(&opts.threshold) {
        return Err(Error::Domain(format!(
            "threshold {} outside 1..=16",
            opts.threshold
        )));
    }
    let convert = |records: &[DigitRecord], count: usize| -> Result<Vec<PatternRecord>> {
        select_balanced(records, count)?
            .into_iter()
            .map(|k| to_pattern(&records[k], opts))
            .collect()
    };
    Ok((
        convert(train_records, opts.train_count)?,
        convert(test_records, opts.test_count)?,
    ))
}

/// One pattern per line: the spins as `+1`/`-1` separated by spaces, then
/// the class digit.
pub fn write_patterns<W: Write>(mut out: W, patterns: &[PatternRecord]) -> Result<()> {
    for p in patterns {
        for s in &p.visible {
            out.write_all(if *s > 0 { b"+1 " } else { b"-1 " })?;
        }
        writeln!(out, "{}", p.class)?;
    }
    Ok(())
}

pub fn read_patterns<R: BufRead>(input: R, path: &Path) -> Result<Vec<PatternRecord>> {
    let mut out = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != PATTERN_UNITS + 1 {
            return Err(parse_err(format!(
                "expected {} fields, found {}",
                PATTERN_UNITS + 1,
                fields.len()
            )));
        }
        let visible = fields[..PATTERN_UNITS]
            .iter()
            .map(|f| match *f {
                "+1" | "1" => Ok(1),
                "-1" => Ok(-1),
                other => Err(parse_err(format!("{other:?} is not a spin"))),
            })
            .collect::<Result<Vec<Spin>>>()?;
        let class: u8 = fields[PATTERN_UNITS]
            .parse()
            .map_err(|_| parse_err(format!("bad class {:?}", fields[PATTERN_UNITS])))?;
        let record = PatternRecord { visible, class };
        record.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

pub fn save_patterns(path: impl AsRef<Path>, patterns: &[PatternRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_patterns(&mut buf, patterns)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_patterns(path: impl AsRef<Path>) -> Result<Vec<PatternRecord>> {
    let path = path.as_ref();
    read_patterns(BufReader::new(File::open(path)?), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn digit(value: u8, label: u8) -> DigitRecord {
        DigitRecord {
            pixels: [value; 64],
            label,
        }
    }

    fn line(values: &[u8], label: u8) -> String {
        let mut s: Vec<String> = values.iter().map(u8::to_string).collect();
        s.push(label.to_string());
        s.join(",")
    }

    #[test]
    fn bas_counts() {
        let two = gen_bas(2).unwrap();
        assert_eq!(two.len(), 6);
        assert_eq!(two.iter().collect::<BTreeSet<_>>().len(), 6);
        let eight = gen_bas(8).unwrap();
        assert_eq!(eight.len(), 2 * 256 - 2);
        assert_eq!(eight.iter().collect::<BTreeSet<_>>().len(), 510);
        for p in &eight {
            let rows = (0..8).all(|r| (0..8).all(|c| p[r * 8 + c] == p[r * 8]));
            let cols = (0..8).all(|c| (0..8).all(|r| p[r * 8 + c] == p[c]));
            assert!(rows || cols);
        }
        assert_eq!(gen_bas(1).unwrap().len(), 2);
        assert!(gen_bas(0).is_err());
    }

    #[test]
    fn bas_order_is_stripes_then_bars() {
        let two = gen_bas(2).unwrap();
        assert_eq!(two[0], vec![-1, -1, -1, -1]);
        assert_eq!(two[1], vec![1, 1, -1, -1]);
        assert_eq!(two[3], vec![1, 1, 1, 1]);
        assert_eq!(two[4], vec![1, -1, 1, -1]);
        assert_eq!(two[5], vec![-1, 1, -1, 1]);
    }

    #[test]
    fn parses_a_zero_line() {
        let text = line(&[0; 64], 3);
        let recs = parse_optdigits(text.as_bytes(), Path::new("x.tra")).unwrap();
        assert_eq!(recs, vec![digit(0, 3)]);
    }

    #[test]
    fn wrong_field_count_names_the_line() {
        let text = format!("{}\n{},0", line(&[0; 64], 1), line(&[0; 64], 2));
        match parse_optdigits(text.as_bytes(), Path::new("x.tra")) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("66"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_range_pixel() {
        let mut px = [0u8; 64];
        px[10] = 17;
        let err = parse_optdigits(line(&px, 1).as_bytes(), Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Range(_)));
    }

    #[test]
    fn pattern_cases() {
        let opts = PreprocessOptions::default();
        let zero = to_pattern(&digit(0, 0), &opts).unwrap();
        assert!(zero.pixels().iter().all(|&s| s == -1));
        assert_eq!(zero.label_spins(), &[1, -1, -1, -1, -1, -1, -1, -1]);
        let full = to_pattern(&digit(16, 5), &opts).unwrap();
        assert!(full.pixels().iter().all(|&s| s == 1));
        full.validate().unwrap();
        assert!(to_pattern(&digit(0, 9), &opts).is_err());
    }

    #[test]
    fn column_reductions() {
        let mut px = [0u8; 64];
        for r in 0..8 {
            px[r * 8] = 16;
            px[r * 8 + 7] = 16;
        }
        let rec = DigitRecord {
            pixels: px,
            label: 1,
        };
        let with = |columns| {
            to_pattern(
                &rec,
                &PreprocessOptions {
                    columns,
                    ..PreprocessOptions::default()
                },
            )
            .unwrap()
        };
        let right = with(ColumnReduction::DropRight);
        assert_eq!((right.visible[0], right.visible[6]), (1, -1));
        let left = with(ColumnReduction::DropLeft);
        assert_eq!((left.visible[0], left.visible[6]), (-1, 1));
        let merged = with(ColumnReduction::MergeMax);
        assert_eq!((merged.visible[0], merged.visible[6]), (1, 1));
    }

    #[test]
    fn balanced_selection_round_robins() {
        let mut recs = Vec::new();
        for k in 0..40u8 {
            recs.push(digit(0, k % 10));
        }
        let picks = select_balanced(&recs, 12).unwrap();
        let classes: Vec<u8> = picks.iter().map(|&k| recs[k].label).collect();
        let mut counts = [0; 10];
        classes.iter().for_each(|&c| counts[c as usize] += 1);
        assert_eq!(&counts[..8], &[2, 2, 2, 2, 1, 1, 1, 1]);
        assert_eq!(counts[8] + counts[9], 0);
        assert!(picks.windows(2).all(|w| w[0] < w[1]));
        assert!(matches!(
            select_balanced(&recs, 33),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn uneven_classes_fill_from_the_rest() {
        let mut recs = vec![digit(0, 0)];
        recs.extend((0..20).map(|_| digit(0, 1)));
        let picks = select_balanced(&recs, 6).unwrap();
        assert_eq!(picks.iter().filter(|&&k| recs[k].label == 0).count(), 1);
    }

    #[test]
    fn bad_threshold() {
        let opts = PreprocessOptions {
            threshold: 0,
            ..PreprocessOptions::default()
        };
        assert!(preprocess(&[], &[], &opts).is_err());
    }

    proptest! {
        #[test]
        fn pattern_file_round_trip(classes in proptest::collection::vec(0u8..8, 1..10), seed in any::<u64>()) {
            let mut x = seed;
            let patterns: Vec<PatternRecord> = classes
                .iter()
                .map(|&c| {
                    let mut visible: Vec<Spin> = (0..PIXEL_UNITS)
                        .map(|_| {
                            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                            if x >> 63 == 1 { 1 } else { -1 }
                        })
                        .collect();
                    visible.extend(label_spins(c));
                    PatternRecord { visible, class: c }
                })
                .collect();
            let mut buf = Vec::new();
            write_patterns(&mut buf, &patterns).unwrap();
            let back = read_patterns(buf.as_slice(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, patterns);
        }
    }
}
