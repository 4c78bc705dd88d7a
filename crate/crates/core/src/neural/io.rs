//! Flat CSV serialisation of network parameters.
//!
//! Every parameter entry is one `part,layer,row,col,value` row; a leading
//! `#` line records the shape needed to rebuild the network.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::data::fmt_f64;
use crate::error::{Error, Result};

use super::encoder::EncoderNet;
use super::mlp::Mlp;

fn mlp_dims(net: &Mlp) -> Vec<usize> {
    let mut dims = vec![net.input_dim()];
    dims.extend(net.layers.iter().map(|l| l.w.nrows()));
    dims
}

fn write_mlp_rows<W: Write>(f: &mut W, part_w: &str, part_b: &str, net: &Mlp) -> Result<()> {
    for (li, l) in net.layers.iter().enumerate() {
        for r in 0..l.w.nrows() {
            for c in 0..l.w.ncols() {
                writeln!(f, "{part_w},{li},{r},{c},{}", fmt_f64(l.w[(r, c)]))?;
            }
        }
        for r in 0..l.b.len() {
            writeln!(f, "{part_b},{li},{r},0,{}", fmt_f64(l.b[r]))?;
        }
    }
    Ok(())
}

pub fn write_mlp_csv(net: &Mlp, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let dims: Vec<String> = mlp_dims(net).iter().map(|d| d.to_string()).collect();
    writeln!(f, "# mlp dims={}", dims.join(","))?;
    writeln!(f, "part,layer,row,col,value")?;
    write_mlp_rows(&mut f, "w", "b", net)?;
    Ok(())
}

pub fn write_encoder_csv(enc: &EncoderNet, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let dims: Vec<String> = mlp_dims(&enc.residual).iter().map(|d| d.to_string()).collect();
    writeln!(
        f,
        "# encoder nx={} ny={} nu={} n_a={} n_b={} residual_dims={}",
        enc.nx(),
        enc.ny,
        enc.nu,
        enc.n_a,
        enc.n_b,
        dims.join(",")
    )?;
    writeln!(f, "part,layer,row,col,value")?;
    for r in 0..enc.w_y.nrows() {
        for c in 0..enc.w_y.ncols() {
            writeln!(f, "w_y,0,{r},{c},{}", fmt_f64(enc.w_y[(r, c)]))?;
        }
    }
    for r in 0..enc.w_u.nrows() {
        for c in 0..enc.w_u.ncols() {
            writeln!(f, "w_u,0,{r},{c},{}", fmt_f64(enc.w_u[(r, c)]))?;
        }
    }
    for r in 0..enc.bias.len() {
        writeln!(f, "bias,0,{r},0,{}", fmt_f64(enc.bias[r]))?;
    }
    write_mlp_rows(&mut f, "res_w", "res_b", &enc.residual)?;
    Ok(())
}

struct CsvRows {
    rows: Vec<(String, usize, usize, usize, f64)>,
    meta: String,
}

fn read_rows(path: &Path) -> Result<CsvRows> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut meta = String::new();
    let mut rows = Vec::new();
    for line in f.lines() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(m) = t.strip_prefix('#') {
            meta = m.trim().to_string();
            continue;
        }
        if t.starts_with("part,") {
            continue;
        }
        let parts: Vec<&str> = t.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::Parse(format!("expected 5 columns, got {t:?}")));
        }
        let idx = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad index {s:?}")));
        let val = parts[4].parse::<f64>().map_err(|_| Error::Parse(format!("bad value {:?}", parts[4])))?;
        rows.push((parts[0].to_string(), idx(parts[1])?, idx(parts[2])?, idx(parts[3])?, val));
    }
    Ok(CsvRows { rows, meta })
}

fn meta_field(meta: &str, key: &str) -> Result<String> {
    meta.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")).map(str::to_string))
        .ok_or_else(|| Error::Parse(format!("missing {key}= in header {meta:?}")))
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|d| d.parse::<usize>().map_err(|_| Error::Parse(format!("bad dim {d:?}"))))
        .collect()
}

pub fn read_mlp_csv(path: &Path) -> Result<Mlp> {
    let data = read_rows(path)?;
    let dims = parse_dims(&meta_field(&data.meta, "dims")?)?;
    let mut net = Mlp::zeros(&dims);
    fill_mlp(&mut net, &data.rows, "w", "b")?;
    Ok(net)
}

fn fill_mlp(net: &mut Mlp, rows: &[(String, usize, usize, usize, f64)], part_w: &str, part_b: &str) -> Result<()> {
    for (part, layer, r, c, v) in rows {
        if part == part_w {
            let l = net.layers.get_mut(*layer).ok_or_else(|| Error::Parse(format!("layer {layer} out of range")))?;
            if *r >= l.w.nrows() || *c >= l.w.ncols() {
                return Err(Error::Parse(format!("{part_w} index ({r},{c}) out of range in layer {layer}")));
            }
            l.w[(*r, *c)] = *v;
        } else if part == part_b {
            let l = net.layers.get_mut(*layer).ok_or_else(|| Error::Parse(format!("layer {layer} out of range")))?;
            if *r >= l.b.len() {
                return Err(Error::Parse(format!("{part_b} index {r} out of range in layer {layer}")));
            }
            l.b[*r] = *v;
        }
    }
    Ok(())
}

pub fn read_encoder_csv(path: &Path) -> Result<EncoderNet> {
    let data = read_rows(path)?;
    let get = |k: &str| -> Result<usize> {
        meta_field(&data.meta, k)?
            .parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad {k} in header")))
    };
    let (nx, ny, nu, n_a, n_b) = (get("nx")?, get("ny")?, get("nu")?, get("n_a")?, get("n_b")?);
    let dims = parse_dims(&meta_field(&data.meta, "residual_dims")?)?;
    let hidden = &dims[1..dims.len() - 1];
    let mut rng = crate::rng::RngStream::new(0, 0);
    let mut enc = EncoderNet::new(nx, ny, nu, n_a, n_b, hidden, &mut rng);
    enc.residual = Mlp::zeros(&dims);
    for (part, _, r, c, v) in &data.rows {
        match part.as_str() {
            "w_y" => enc.w_y[(*r, *c)] = *v,
            "w_u" => enc.w_u[(*r, *c)] = *v,
            "bias" => enc.bias[*r] = *v,
            _ => {}
        }
    }
    fill_mlp(&mut enc.residual, &data.rows, "res_w", "res_b")?;
    Ok(enc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn encoder_csv_round_trip_is_bit_exact() {
        let mut rng = RngStream::new(15, 0);
        let mut enc = EncoderNet::new(3, 2, 1, 4, 3, &[8, 8], &mut rng);
        enc.w_y = rng.normal_matrix(3, 8);
        enc.w_u = rng.normal_matrix(3, 3);
        enc.bias = rng.normal_vector(3);
        enc.residual = Mlp::new_glorot(&[11, 8, 8, 3], &mut rng);
        let dir = std::env::temp_dir().join(format!("sysid_nio_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("enc.csv");
        write_encoder_csv(&enc, &path).unwrap();
        let back = read_encoder_csv(&path).unwrap();
        assert_eq!(enc.w_y, back.w_y);
        assert_eq!(enc.w_u, back.w_u);
        assert_eq!(enc.bias, back.bias);
        for (a, b) in enc.residual.layers.iter().zip(&back.residual.layers) {
            assert_eq!(a.w, b.w);
            assert_eq!(a.b, b.b);
        }
        assert_eq!((back.n_a, back.n_b, back.ny, back.nu), (4, 3, 2, 1));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn mlp_csv_round_trip() {
        let mut rng = RngStream::new(16, 0);
        let net = Mlp::new_glorot(&[5, 16, 4], &mut rng);
        let dir = std::env::temp_dir().join(format!("sysid_nio_mlp_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mlp.csv");
        write_mlp_csv(&net, &path).unwrap();
        let back = read_mlp_csv(&path).unwrap();
        for (a, b) in net.layers.iter().zip(&back.layers) {
            assert_eq!(a.w, b.w);
            assert_eq!(a.b, b.b);
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
