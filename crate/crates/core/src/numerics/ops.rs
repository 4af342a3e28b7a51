use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

pub(crate) fn check_row(m: &Tensor, i: usize) -> Result<()> {
    m.expect_matrix("row")?;
    if i >= m.rows() {
        return Err(Error::shape(format!("row {i} of matrix {:?}", m.dims())));
    }
    Ok(())
}

pub(crate) fn stack_values(rows: &[&Tensor]) -> Result<Tensor> {
    let first = rows.first().ok_or_else(|| Error::shape("stack of zero rows"))?;
    let n = first.expect_vector("stack")?;
    let mut data = Vec::with_capacity(rows.len() * n);
    for r in rows {
        if r.dims() != [n] {
            return Err(Error::shape(format!(
                "stack: row {:?} vs row {:?}",
                first.dims(),
                r.dims()
            )));
        }
        data.extend_from_slice(r.data());
    }
    Tensor::new(vec![rows.len(), n], data)
}

pub(crate) fn concat_values(parts: &[&Tensor]) -> Result<Tensor> {
    let mut data = Vec::new();
    for p in parts {
        p.expect_vector("concat")?;
        data.extend_from_slice(p.data());
    }
    if data.is_empty() {
        return Err(Error::shape("concat of nothing"));
    }
    Ok(Tensor::vector(data))
}

pub(crate) fn zip_values(a: &Tensor, b: &Tensor, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    a.same_dims(b, what)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.dims().to_vec(), data)
}

pub(crate) fn add_rows_value(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (_, cols) = m.expect_matrix("add_rows")?;
    if v.dims() != [cols] {
        return Err(Error::shape(format!(
            "add_rows: matrix {:?} vs vector {:?}",
            m.dims(),
            v.dims()
        )));
    }
    let mut out = m.clone();
    for chunk in out.data_mut().chunks_exact_mut(cols) {
        tensor::axpy(1.0, v.data(), chunk);
    }
    Ok(out)
}

pub(crate) fn rows_value(m: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let (r, c) = m.expect_matrix("rows")?;
    if start >= end || end > r {
        return Err(Error::shape(format!("rows {start}..{end} of matrix {:?}", m.dims())));
    }
    Tensor::new(vec![end - start, c], m.data()[start * c..end * c].to_vec())
}

pub(crate) fn scatter_value(v: &Tensor, offset: usize, len: usize) -> Result<Tensor> {
    let n = v.expect_vector("scatter")?;
    if offset + n > len {
        return Err(Error::shape(format!("scatter of {n} entries at {offset} into {len}")));
    }
    let mut out = vec![0.0; len];
    out[offset..offset + n].copy_from_slice(v.data());
    Ok(Tensor::vector(out))
}

pub(crate) fn pick_value(v: &Tensor, i: usize) -> Result<Tensor> {
    let n = v.expect_vector("pick")?;
    if i >= n {
        return Err(Error::shape(format!("pick index {i} of vector {:?}", v.dims())));
    }
    Ok(Tensor::scalar(v.data()[i]))
}
