use std::path::Path;

use crate::error::{Error, Result};

/// Per-epoch training record: an `epoch` column followed by named values.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsLog {
    columns: Vec<String>,
    rows: Vec<(usize, Vec<f64>)>,
}

impl MetricsLog {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        MetricsLog {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, epoch: usize, values: Vec<f64>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::invalid(format!(
                "metrics row has {} values for {} columns",
                values.len(),
                self.columns.len()
            )));
        }
        if let Some(&(last, _)) = self.rows.last() {
            if epoch <= last {
                return Err(Error::invalid(format!("epoch {epoch} logged after {last}")));
            }
        }
        self.rows.push((epoch, values));
        Ok(())
    }

    pub fn rows(&self) -> &[(usize, Vec<f64>)] {
        &self.rows
    }

    /// Values of one column across epochs.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|(_, v)| v[k]).collect())
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.column(name).and_then(|c| c.last().copied())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["epoch".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (epoch, values) in &self.rows {
            let mut rec = vec![epoch.to_string()];
            rec.extend(values.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        if header.get(0) != Some("epoch") {
            return Err(Error::invalid("metrics header must start with `epoch`"));
        }
        let mut log = MetricsLog::new(header.iter().skip(1));
        for rec in r.records() {
            let rec = rec?;
            let bad = |f: &str| Error::invalid(format!("bad metrics field `{f}`"));
            let epoch = rec.get(0).unwrap_or("").parse().map_err(|_| bad(rec.get(0).unwrap_or("")))?;
            let values = rec
                .iter()
                .skip(1)
                .map(|f| f.parse::<f64>().map_err(|_| bad(f)))
                .collect::<Result<Vec<_>>>()?;
            log.push(epoch, values)?;
        }
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        MetricsLog::from_csv(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let mut log = MetricsLog::new(["lr", "ctc"]);
        log.push(1, vec![0.001, 1.0 / 3.0]).unwrap();
        log.push(2, vec![1e-4, f64::NAN]).unwrap();
        let text = log.to_csv().unwrap();
        assert!(text.starts_with("epoch,lr,ctc\n1,0.001,0.3333333333333333\n"));
        let back = MetricsLog::from_csv(&text).unwrap();
        assert_eq!(back.columns(), log.columns());
        assert_eq!(back.rows()[0], log.rows()[0]);
        assert!(back.rows()[1].1[1].is_nan());
        assert!(log.push(2, vec![0.0, 0.0]).is_err());
        assert!(log.push(3, vec![0.0]).is_err());
    }
}
