use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::sha256_hex;

/// Ordered label universe; a label's index is its line number in the
/// taxonomy file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Taxonomy {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Taxonomy {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data("taxonomy has no labels".into()));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() {
                return Err(Error::Data(format!("taxonomy label {i} is empty")));
            }
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::DuplicateLabel(l.clone()));
            }
        }
        Ok(Self { labels, index })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(|l| l.trim_end_matches('\r'))
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = self.labels.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn name(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn checksum(&self) -> String {
        sha256_hex(self.to_file_string().as_bytes())
    }
}

/// One multi-label record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub name: String,
    pub keywords: Vec<String>,
    pub description: String,
    /// Distinct taxonomy indices, in file order.
    pub labels: Vec<usize>,
}

impl Sample {
    pub fn label_set(&self) -> BTreeSet<usize> {
        self.labels.iter().copied().collect()
    }
}

/// Wire form of a dataset line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub labels: Vec<String>,
}

pub const MAX_LABELS_PER_SAMPLE: usize = 4;

impl SampleRecord {
    pub fn from_sample(s: &Sample, taxonomy: &Taxonomy) -> Self {
        Self {
            id: s.id.clone(),
            name: s.name.clone(),
            keywords: s.keywords.clone(),
            description: s.description.clone(),
            labels: s.labels.iter().map(|&l| taxonomy.name(l).to_owned()).collect(),
        }
    }

    /// Input-only view for inference; any labels are ignored.
    pub fn into_unlabeled(self) -> Sample {
        Sample {
            id: self.id,
            name: self.name,
            keywords: self.keywords,
            description: self.description,
            labels: Vec::new(),
        }
    }

    pub fn resolve(self, taxonomy: &Taxonomy) -> Result<Sample> {
        let mut labels = Vec::with_capacity(self.labels.len());
        for l in &self.labels {
            let idx = taxonomy
                .index_of(l)
                .ok_or_else(|| Error::Data(format!("sample `{}`: unknown label `{l}`", self.id)))?;
            if !labels.contains(&idx) {
                labels.push(idx);
            }
        }
        if labels.is_empty() {
            return Err(Error::Data(format!("sample `{}` has no labels", self.id)));
        }
        if labels.len() > MAX_LABELS_PER_SAMPLE {
            return Err(Error::Data(format!(
                "sample `{}` has {} labels, at most {MAX_LABELS_PER_SAMPLE} allowed",
                self.id,
                labels.len()
            )));
        }
        Ok(Sample {
            id: self.id,
            name: self.name,
            keywords: self.keywords,
            description: self.description,
            labels,
        })
    }
}

/// Parses JSON Lines; blank lines are skipped.
pub fn parse_jsonl(reader: impl Read, taxonomy: &Taxonomy) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let s = rec.resolve(taxonomy)?;
        if !seen.insert(s.id.clone()) {
            return Err(Error::Data(format!("duplicate sample id `{}`", s.id)));
        }
        samples.push(s);
    }
    if samples.is_empty() {
        return Err(Error::Data("no samples".into()));
    }
    Ok(samples)
}

/// Loads a taxonomy and a dataset. Files ending in `.csv` are read with the
/// CSV importer, everything else as JSON Lines.
pub fn load_dataset(dataset: &Path, taxonomy: &Path) -> Result<(Taxonomy, Vec<Sample>)> {
    let tax = Taxonomy::load(taxonomy)?;
    let file = std::fs::File::open(dataset)?;
    let samples = if dataset.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        super::csv_import::parse_csv(file, &tax)?
    } else {
        parse_jsonl(file, &tax)?
    };
    Ok((tax, samples))
}

pub fn to_jsonl(samples: &[Sample], taxonomy: &Taxonomy) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(&SampleRecord::from_sample(s, taxonomy))?);
        out.push('\n');
    }
    Ok(out)
}

pub const PROMPT_CHAR_LIMIT: usize = 1000;

/// Concatenates name, keywords and description into the model input,
/// truncating the description so the result stays within `limit` characters.
pub fn assemble_prompt_with_limit(sample: &Sample, limit: usize) -> String {
    let head = format!("{}\nkeywords: {}\ndescription: ", sample.name, sample.keywords.join(", "));
    let full_len = head.chars().count() + sample.description.chars().count() + 1;
    if full_len <= limit {
        return format!("{head}{}\n", sample.description);
    }
    let head_len = head.chars().count();
    if head_len + 1 <= limit {
        let keep = limit - head_len - 1;
        let desc: String = sample.description.chars().take(keep).collect();
        return format!("{head}{desc}\n");
    }
    // Name and keywords alone are over budget.
    head.chars().take(limit).collect()
}

pub fn assemble_prompt(sample: &Sample) -> String {
    assemble_prompt_with_limit(sample, PROMPT_CHAR_LIMIT)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax() -> Taxonomy {
        Taxonomy::parse("Health\nFintech\n").unwrap()
    }

    fn sample(desc: &str, keywords: &[&str]) -> Sample {
        Sample {
            id: "x".into(),
            name: "Acme".into(),
            keywords: keywords.iter().map(|s| s.to_string()).collect(),
            description: desc.into(),
            labels: vec![0],
        }
    }

    #[test]
    fn duplicate_taxonomy_label_rejected() {
        assert!(matches!(
            Taxonomy::parse("a\nb\na\n"),
            Err(Error::DuplicateLabel(_))
        ));
    }

    #[test]
    fn empty_file_has_no_samples() {
        let err = parse_jsonl("".as_bytes(), &tax()).unwrap_err();
        assert!(err.to_string().contains("no samples"));
    }

    #[test]
    fn one_line_resolves_labels() {
        let line = r#"{"id":"a","name":"n","keywords":["k"],"description":"d","labels":["Fintech","Health"]}"#;
        let s = parse_jsonl(line.as_bytes(), &tax()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].labels, vec![1, 0]);
    }

    #[test]
    fn unknown_label_names_sample() {
        let line = r#"{"id":"zz","labels":["Nope"]}"#;
        let err = parse_jsonl(line.as_bytes(), &tax()).unwrap_err();
        assert!(err.to_string().contains("zz"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\":\"a\",\"labels\":[\"Health\"]}\n{not json\n";
        match parse_jsonl(text.as_bytes(), &tax()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "{\"id\":\"a\",\"labels\":[\"Health\"]}\n{\"id\":\"a\",\"labels\":[\"Health\"]}\n";
        assert!(parse_jsonl(text.as_bytes(), &tax()).is_err());
    }

    #[test]
    fn prompt_layout() {
        assert_eq!(
            assemble_prompt(&sample("Builds things.", &["a", "b"])),
            "Acme\nkeywords: a, b\ndescription: Builds things.\n"
        );
        assert_eq!(
            assemble_prompt(&sample("d", &[])),
            "Acme\nkeywords: \ndescription: d\n"
        );
    }

    #[test]
    fn long_description_truncated_on_char_boundary() {
        let desc: String = "é".repeat(5000);
        let p = assemble_prompt(&sample(&desc, &["k"]));
        assert!(p.chars().count() <= PROMPT_CHAR_LIMIT);
        assert_eq!(p.chars().count(), PROMPT_CHAR_LIMIT);
        assert!(p.ends_with('\n'));
    }
}
