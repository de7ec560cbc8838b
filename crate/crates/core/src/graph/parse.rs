use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};

use super::{Interaction, TemporalGraph};

#[derive(Clone, Debug, Default)]
pub struct ParseOptions {
    pub directed: bool,
    pub has_header: bool,
    /// Expected number of trailing feature columns; `None` infers it from
    /// the first data line.
    pub feature_width: Option<usize>,
}

/// Parses `src,dst,timestamp[,f0,...]` lines. Node ids are arbitrary strings,
/// mapped to dense integers in first-seen order. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_edge_list<R: Read>(source: R, opts: &ParseOptions) -> Result<TemporalGraph> {
    let reader = BufReader::new(source);
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut names: Vec<String> = Vec::new();
    let mut interactions = Vec::new();
    let mut features = Vec::new();
    let mut width = opts.feature_width;
    let mut header_pending = opts.has_header;

    let mut intern = |name: &str, names: &mut Vec<String>| -> usize {
        if let Some(&id) = ids.get(name) {
            return id;
        }
        let id = names.len();
        ids.insert(name.to_string(), id);
        names.push(name.to_string());
        id
    };

    for (lineno, line) in reader.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected src,dst,timestamp; found {} field(s)", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse { line: line_no, msg: "empty node id".into() });
        }
        let time: f64 = fields[2]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, msg: format!("invalid timestamp {:?}", fields[2]) })?;
        if !time.is_finite() {
            return Err(Error::Parse { line: line_no, msg: format!("non-finite timestamp {:?}", fields[2]) });
        }
        let row_width = fields.len() - 3;
        let expected = *width.get_or_insert(row_width);
        if row_width != expected {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {expected} feature column(s), found {row_width}"),
            });
        }
        for f in &fields[3..] {
            let v: f64 =
                f.parse().map_err(|_| Error::Parse { line: line_no, msg: format!("invalid feature value {f:?}") })?;
            features.push(v);
        }
        let src = intern(fields[0], &mut names);
        let dst = intern(fields[1], &mut names);
        interactions.push(Interaction { src, dst, time });
    }

    let width = width.unwrap_or(0);
    TemporalGraph::new(names.len(), interactions, width, features, opts.directed)?.with_node_names(names)
}

pub fn read_edge_list(path: impl AsRef<Path>, opts: &ParseOptions) -> Result<TemporalGraph> {
    let file = std::fs::File::open(path)?;
    parse_edge_list(file, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn directed() -> ParseOptions {
        ParseOptions { directed: true, ..Default::default() }
    }

    #[test]
    fn single_directed_edge() {
        let g = parse_edge_list("0,1,10.0\n".as_bytes(), &directed()).unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.messages().len(), 1);
    }

    #[test]
    fn undirected_doubles_messages() {
        let g = parse_edge_list("V,A,1\nV,F,4".as_bytes(), &ParseOptions::default()).unwrap();
        assert_eq!(g.num_nodes(), 3);
        let times: Vec<f64> = g.messages().iter().map(|m| m.time).collect();
        assert_eq!(times, vec![1.0, 1.0, 4.0, 4.0]);
        assert_eq!(g.node_names(), &["V", "A", "F"]);
    }

    #[test]
    fn parallel_edges_are_kept() {
        let g = parse_edge_list("0,1,10.0\n0,1,10.0\n".as_bytes(), &directed()).unwrap();
        assert_eq!(g.messages().len(), 2);
    }

    #[test]
    fn header_comments_and_features() {
        let src = "# exported\nsrc,dst,ts,a,b\nx,y,3,0.5,1\n\ny,z,1,2,3\n";
        let opts = ParseOptions { has_header: true, ..directed() };
        let g = parse_edge_list(src.as_bytes(), &opts).unwrap();
        assert_eq!(g.feature_width(), 2);
        assert_eq!(g.interactions()[0].time, 1.0);
        assert_eq!(g.features(0), &[2.0, 3.0]);
        assert_eq!(g.features(1), &[0.5, 1.0]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_edge_list("0,1,1\n0,1\n".as_bytes(), &directed()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_edge_list("0,1,abc\n".as_bytes(), &directed()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn inconsistent_feature_width_fails() {
        let err = parse_edge_list("0,1,1,0.5\n1,2,2\n".as_bytes(), &directed()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let opts = ParseOptions { feature_width: Some(2), ..directed() };
        assert!(parse_edge_list("0,1,1,0.5\n".as_bytes(), &opts).is_err());
    }
}
