use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FactorDecl, FactorGraph, VariableDecl};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct FactorRecord {
    id: usize,
    scope: Vec<usize>,
    potentials: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    variables: Vec<VariableDecl>,
    factors: Vec<FactorRecord>,
}

/// Serializes `g` in the interchange format: exp-domain potentials, flat and
/// row-major.
pub fn to_json_string(g: &FactorGraph) -> Result<String> {
    let record = GraphRecord {
        variables: g.variables().to_vec(),
        factors: g
            .factors()
            .iter()
            .map(|f| FactorRecord {
                id: f.id,
                scope: f.scope.clone(),
                potentials: f.potentials().iter().copied().collect(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&record)?)
}

pub fn from_json_str(text: &str) -> Result<FactorGraph> {
    let record: GraphRecord = serde_json::from_str(text)?;
    let mut factors = Vec::with_capacity(record.factors.len());
    for f in record.factors {
        let shape = f
            .scope
            .iter()
            .map(|&v| {
                record
                    .variables
                    .get(v)
                    .map(|d| d.cardinality)
                    .ok_or(Error::UnknownVariable { factor: f.id, var: v })
            })
            .collect::<Result<Vec<_>>>()?;
        factors.push(FactorDecl::from_flat(f.id, f.scope, &shape, f.potentials)?);
    }
    FactorGraph::new(record.variables, factors)
}

pub fn write_json(g: &FactorGraph, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_json_string(g)?)?;
    Ok(())
}

pub fn read_json(path: impl AsRef<Path>) -> Result<FactorGraph> {
    from_json_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_value_exact() {
        let vars = vec![VariableDecl::new(0, 2), VariableDecl::new(1, 3)];
        let f = FactorDecl::from_flat(0, vec![1, 0], &[3, 2], vec![0.1, 0.0, 1.0 / 3.0, 2.5e-300, 7.0, 1e10]).unwrap();
        let g = FactorGraph::new(vars, vec![f]).unwrap();
        let text = to_json_string(&g).unwrap();
        let back = from_json_str(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(to_json_string(&back).unwrap(), text);
    }

    #[test]
    fn malformed_inputs_error() {
        assert!(from_json_str("{").is_err());
        let bad = r#"{"variables":[{"id":0,"cardinality":2}],"factors":[{"id":0,"scope":[0],"potentials":[1.0]}]}"#;
        assert!(matches!(from_json_str(bad), Err(Error::ShapeMismatch(_))));
    }
}
