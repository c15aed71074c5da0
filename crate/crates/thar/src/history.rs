//! Training history CSV (`epoch,loss,train_acc,val_acc`).

use std::io::{Read, Write};

use thar_core::float_engine::EpochStats;

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct Row {
    epoch: usize,
    loss: f64,
    train_acc: f64,
    val_acc: Option<f64>,
}

pub fn write_history<W: Write>(w: W, history: &[EpochStats]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for h in history {
        out.serialize(Row {
            epoch: h.epoch,
            loss: h.loss,
            train_acc: h.train_acc,
            val_acc: h.val_acc,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_history<R: Read>(r: R) -> csv::Result<Vec<EpochStats>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| {
            row.map(|r: Row| EpochStats {
                epoch: r.epoch,
                loss: r.loss,
                train_acc: r.train_acc,
                val_acc: r.val_acc,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_header() {
        let h = vec![
            EpochStats {
                epoch: 1,
                loss: 2.5,
                train_acc: 0.25,
                val_acc: Some(0.3),
            },
            EpochStats {
                epoch: 2,
                loss: 1.125,
                train_acc: 0.5,
                val_acc: None,
            },
        ];
        let mut buf = Vec::new();
        write_history(&mut buf, &h).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("epoch,loss,train_acc,val_acc\n"));
        assert_eq!(read_history(buf.as_slice()).unwrap(), h);
    }
}
