use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use clap::ValueEnum;
use serde::Serialize;
use serde_json::{Map, Value};

use smart_cluster::estimator::SCHEMA;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// A flat table for `--format csv`.
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<&'static str>) -> Self {
        Table { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

pub fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Serializes `body` with a leading `schema` field.
pub fn versioned<T: Serialize>(body: &T) -> serde_json::Result<Value> {
    let mut map = Map::new();
    map.insert("schema".into(), Value::from(SCHEMA));
    match serde_json::to_value(body)? {
        Value::Object(fields) => {
            for (k, v) in fields {
                if k != "schema" {
                    map.insert(k, v);
                }
            }
        }
        other => {
            map.insert("result".into(), other);
        }
    }
    Ok(Value::Object(map))
}

pub fn write_json(out: &mut dyn Write, value: &Value) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    out.flush()
}

pub fn write_table(out: &mut dyn Write, table: &Table) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn num(v: f64) -> String {
    format!("{v}")
}
