//! CSV tables with a `#` provenance line naming the experiment and generator.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use lorentz_wente::random::RNG_NAME;

use crate::CliError;

pub fn header_line(experiment: &str) -> String {
    format!("# experiment={experiment} rng={RNG_NAME}\n")
}

pub fn write_rows<T: Serialize>(mut w: impl Write, experiment: &str, rows: &[T]) -> Result<(), CliError> {
    w.write_all(header_line(experiment).as_bytes())?;
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(r: impl Read) -> Result<Vec<T>, CliError> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    rd.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

pub fn save<T: Serialize>(path: &Path, experiment: &str, rows: &[T]) -> Result<(), CliError> {
    write_rows(BufWriter::new(File::create(path)?), experiment, rows)
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    read_rows(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        name: String,
        x: f64,
        bound: Option<f64>,
    }

    #[test]
    fn rows_round_trip_past_the_header_line() {
        let rows = vec![
            Row { name: "a".into(), x: 0.1 + 0.2, bound: None },
            Row { name: "b".into(), x: -1e-300, bound: Some(1.25) },
        ];
        let mut buf = Vec::new();
        write_rows(&mut buf, "demo", &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# experiment=demo rng=ChaCha8Rng"));
        assert_eq!(text.lines().nth(1), Some("name,x,bound"));
        assert_eq!(read_rows::<Row>(&buf[..]).unwrap(), rows);
    }
}
