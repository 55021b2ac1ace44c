use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Reserved index of the padding entry in every feature vocabulary.
pub const PAD_INDEX: usize = 0;
/// Reserved index of the unknown/withheld entry in every feature vocabulary.
pub const UNK_INDEX: usize = 1;
/// Number of reserved entries at the start of every feature vocabulary.
pub const RESERVED: usize = 2;

/// Name of the implicit behavior feature carrying the slot index.
pub const POSITION: &str = "position";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    /// Static per item (year, genre, price).
    Item,
    /// Bound to a single interaction (rating, action type).
    Behavior,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Item => "item",
            FeatureKind::Behavior => "behavior",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoding {
    Categorical,
    /// Numeric value mapped to `partition_point(edges, <= value)`.
    Bucketed { edges: Vec<f64> },
    /// `|`-separated set of categorical values, mean-pooled at fusion time.
    MultiCategorical,
}

impl Encoding {
    pub fn name(&self) -> &'static str {
        match self {
            Encoding::Categorical => "categorical",
            Encoding::Bucketed { .. } => "bucketed",
            Encoding::MultiCategorical => "multi",
        }
    }

    pub fn is_multi(&self) -> bool {
        matches!(self, Encoding::MultiCategorical)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDecl {
    pub name: String,
    pub kind: FeatureKind,
    pub encoding: Encoding,
}

/// Declaration of every side-information feature. Position is implicit and
/// never declared here.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SideInfoSchema {
    features: Vec<FeatureDecl>,
}

impl SideInfoSchema {
    pub fn new(features: Vec<FeatureDecl>) -> Result<Self> {
        for (i, f) in features.iter().enumerate() {
            if f.name == POSITION {
                return Err(Error::Config(format!("`{POSITION}` is reserved")));
            }
            if f.name.is_empty() || f.name.contains(char::is_whitespace) {
                return Err(Error::Config(format!("invalid feature name `{}`", f.name)));
            }
            if features[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::Config(format!("duplicate feature `{}`", f.name)));
            }
            if let Encoding::Bucketed { edges } = &f.encoding {
                if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Config(format!(
                        "bucket edges of `{}` must be non-empty and strictly increasing",
                        f.name
                    )));
                }
            }
        }
        Ok(Self { features })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn features(&self) -> &[FeatureDecl] {
        &self.features
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Indices (into [`Self::features`]) of the features of one kind, in declaration order.
    pub fn indices_of_kind(&self, kind: FeatureKind) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses `name.kind = item|behavior`, `name.encoding = categorical|bucketed|multi`
    /// and `name.edges = a,b,c` lines. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        struct Partial {
            name: String,
            kind: Option<(FeatureKind, usize)>,
            encoding: Option<(String, usize)>,
            edges: Option<Vec<f64>>,
        }
        let mut partial: Vec<Partial> = Vec::new();
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(line_no, format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let (name, attr) = key
                .rsplit_once('.')
                .ok_or_else(|| parse_err(line_no, format!("expected `feature.attribute`, got `{key}`")))?;
            let idx = match partial.iter().position(|p| p.name == name) {
                Some(i) => i,
                None => {
                    partial.push(Partial {
                        name: name.to_string(),
                        kind: None,
                        encoding: None,
                        edges: None,
                    });
                    partial.len() - 1
                }
            };
            let entry = &mut partial[idx];
            match attr {
                "kind" => {
                    let kind = match value {
                        "item" => FeatureKind::Item,
                        "behavior" => FeatureKind::Behavior,
                        other => {
                            return Err(parse_err(line_no, format!("unknown kind `{other}`")));
                        }
                    };
                    entry.kind = Some((kind, line_no));
                }
                "encoding" => entry.encoding = Some((value.to_string(), line_no)),
                "edges" => {
                    let edges = value
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| parse_err(line_no, format!("bad bucket edge: {e}")))?;
                    entry.edges = Some(edges);
                }
                other => {
                    return Err(parse_err(line_no, format!("unknown attribute `{other}`")));
                }
            }
        }
        let mut features = Vec::with_capacity(partial.len());
        for p in partial {
            let missing = |key: &str| Error::MissingKey {
                key: format!("{}.{key}", p.name),
                path: path.to_path_buf(),
            };
            let (kind, _) = p.kind.ok_or_else(|| missing("kind"))?;
            let (enc, enc_line) = p.encoding.clone().ok_or_else(|| missing("encoding"))?;
            let encoding = match enc.as_str() {
                "categorical" => Encoding::Categorical,
                "multi" => Encoding::MultiCategorical,
                "bucketed" => Encoding::Bucketed {
                    edges: p.edges.clone().ok_or_else(|| missing("edges"))?,
                },
                other => {
                    return Err(parse_err(enc_line, format!("unknown encoding `{other}`")));
                }
            };
            features.push(FeatureDecl {
                name: p.name,
                kind,
                encoding,
            });
        }
        Self::new(features)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in &self.features {
            let _ = writeln!(out, "{}.kind = {}", f.name, f.kind.as_str());
            let _ = writeln!(out, "{}.encoding = {}", f.name, f.encoding.name());
            if let Encoding::Bucketed { edges } = &f.encoding {
                let joined: Vec<String> = edges.iter().map(|e| e.to_string()).collect();
                let _ = writeln!(out, "{}.edges = {}", f.name, joined.join(","));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ML: &str = "\
# MovieLens
year.kind = item
year.encoding = categorical
genres.kind = item
genres.encoding = multi
rating.kind = behavior
rating.encoding = categorical
";

    #[test]
    fn parses_and_roundtrips() {
        let s = SideInfoSchema::parse(ML, Path::new("schema.txt")).unwrap();
        assert_eq!(s.features().len(), 3);
        assert_eq!(s.indices_of_kind(FeatureKind::Item), vec![0, 1]);
        assert!(s.features()[1].encoding.is_multi());
        let again = SideInfoSchema::parse(&s.to_text(), Path::new("x")).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn bucketed_needs_edges() {
        let text = "size.kind = item\nsize.encoding = bucketed\n";
        let err = SideInfoSchema::parse(text, Path::new("s")).unwrap_err();
        assert!(err.to_string().contains("size.edges"), "{err}");
    }

    #[test]
    fn reports_line_numbers() {
        let text = "a.kind = item\na.encoding = categorical\nnonsense\n";
        match SideInfoSchema::parse(text, Path::new("s")).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn position_is_reserved() {
        let text = "position.kind = behavior\nposition.encoding = categorical\n";
        assert!(SideInfoSchema::parse(text, Path::new("s")).is_err());
    }
}
