mod common;

fn check(name: &str) {
    let (_, got, want) = common::cases().into_iter().find(|c| c.0 == name).unwrap();
    if let Some(msg) = common::golden_mismatch(&got, want) {
        panic!("{name}: {msg}");
    }
}

#[test]
fn elementwise_map() {
    check("elementwise map");
}

#[test]
fn row_sums() {
    check("row sums");
}

#[test]
fn filter() {
    check("filter");
}

#[test]
fn histogram() {
    check("histogram");
}

#[test]
fn interchanged_matrix_multiply() {
    check("interchanged matrix multiply");
}
