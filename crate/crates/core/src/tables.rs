//! Row-per-video numeric tables: feature files and prediction files.
//!
//! Both have a `video_id` column followed by a fixed number of real-valued
//! columns. Values are written in shortest round-trip form so reading a
//! table back reproduces the matrix exactly.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::annotations::csv_error;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VideoTable {
    pub columns: Vec<String>,
    pub video_ids: Vec<String>,
    pub values: Array2<f64>,
}

impl VideoTable {
    pub fn new(columns: Vec<String>, video_ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != video_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: video_ids.len(),
                found: values.nrows(),
            });
        }
        if values.ncols() != columns.len() {
            return Err(Error::DimensionMismatch {
                expected: columns.len(),
                found: values.ncols(),
            });
        }
        Ok(Self {
            columns,
            video_ids,
            values,
        })
    }

    /// Feature table with columns named `f0 .. f{D-1}`.
    pub fn features(video_ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        let columns = (0..values.ncols()).map(|j| format!("f{j}")).collect();
        Self::new(columns, video_ids, values)
    }

    pub fn row_of(&self, video_id: &str) -> Option<usize> {
        self.video_ids.iter().position(|v| v == video_id)
    }

    pub fn write(&self, writer: impl Write) -> Result<()> {
        write_table(writer, &self.columns, &self.video_ids, self.values.view())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(file).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn read(reader: impl Read) -> Result<Self> {
        let mut input = csv::Reader::from_reader(reader);
        let header = input.headers().map_err(csv_error)?.clone();
        if header.get(0) != Some("video_id") {
            return Err(Error::Parse {
                line: 1,
                message: "first column must be `video_id`".into(),
            });
        }
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut video_ids = Vec::new();
        let mut flat = Vec::new();
        for (n, row) in input.records().enumerate() {
            let line = n + 2;
            let row = row.map_err(csv_error)?;
            if row.len() != columns.len() + 1 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", columns.len() + 1, row.len()),
                });
            }
            video_ids.push(row[0].to_string());
            for (j, field) in row.iter().skip(1).enumerate() {
                let v: f64 = field.parse().map_err(|e| Error::Parse {
                    line,
                    message: format!("column `{}`: {e}", columns[j]),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        message: format!("column `{}`: non-finite value", columns[j]),
                    });
                }
                flat.push(v);
            }
        }
        let values = Array2::from_shape_vec((video_ids.len(), columns.len()), flat).expect("row lengths checked");
        Self::new(columns, video_ids, values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file).map_err(|e| e.context(path.display().to_string()))
    }
}

pub fn write_table(
    writer: impl Write,
    columns: &[String],
    video_ids: &[String],
    values: ArrayView2<f64>,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["video_id".to_string()];
    header.extend(columns.iter().cloned());
    out.write_record(&header).map_err(csv_error)?;
    for (id, row) in video_ids.iter().zip(values.rows()) {
        let mut fields = vec![id.clone()];
        fields.extend(row.iter().map(|v| v.to_string()));
        out.write_record(&fields).map_err(csv_error)?;
    }
    out.flush().map_err(|e| Error::InvalidRecord(e.to_string()))
}
