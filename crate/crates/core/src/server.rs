//! Database-side request handling.

use crate::error::{Error, Result};
use crate::mechanisms::ServerRequest;
use crate::record::{xor_into, Database, Record};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ServerResponse {
    /// `(index, record)` pairs in request order.
    Records(Vec<(usize, Record)>),
    XorBlock(Record),
}

/// Answers one request, counting every record fetched or folded into the XOR.
pub fn handle(db: &Database, req: &ServerRequest) -> Result<ServerResponse> {
    match req {
        ServerRequest::FetchIndices(indices) => {
            if let Some(&bad) = indices.iter().find(|&&i| i >= db.len()) {
                return Err(Error::Request(format!("index {bad} outside [0, {})", db.len())));
            }
            db.count_accesses(indices.len() as u64);
            Ok(ServerResponse::Records(indices.iter().map(|&i| (i, db.record(i))).collect()))
        }
        ServerRequest::XorSelect(selector) => {
            if selector.len() != db.len() {
                return Err(Error::Request(format!(
                    "selector has length {}, database holds {} records",
                    selector.len(),
                    db.len()
                )));
            }
            let mut acc = vec![0u8; db.record_len()];
            let mut touched = 0u64;
            for i in selector.iter_ones() {
                xor_into(&mut acc, db.peek(i));
                touched += 1;
            }
            db.count_accesses(touched);
            Ok(ServerResponse::XorBlock(Record::new(acc)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitvec::BitVector;
    use crate::record::xor_records;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn small_db() -> Database {
        Database::random(8, 16, &mut RngStream::new(1, 0)).unwrap()
    }

    #[test]
    fn empty_selector_gives_zero_block() {
        let db = small_db();
        let resp = handle(&db, &ServerRequest::XorSelect(BitVector::zeros(8))).unwrap();
        assert_eq!(resp, ServerResponse::XorBlock(Record::zeroed(16)));
        assert_eq!(db.accesses(), 0);
    }

    #[test]
    fn unit_selector_gives_record() {
        let db = small_db();
        let resp = handle(&db, &ServerRequest::XorSelect(BitVector::unit(8, 5))).unwrap();
        assert_eq!(resp, ServerResponse::XorBlock(db.record(5)));
        assert_eq!(db.accesses(), 1);
    }

    #[test]
    fn two_record_selector() {
        let db = small_db();
        let mut v = BitVector::zeros(8);
        v.set(0, true);
        v.set(1, true);
        let resp = handle(&db, &ServerRequest::XorSelect(v)).unwrap();
        let expect = xor_records(&db.record(0), &db.record(1)).unwrap();
        assert_eq!(resp, ServerResponse::XorBlock(expect));
        assert_eq!(db.accesses(), 2);
    }

    #[test]
    fn fetch_preserves_order_and_counts() {
        let db = small_db();
        let resp = handle(&db, &ServerRequest::FetchIndices(vec![7, 3])).unwrap();
        assert_eq!(resp, ServerResponse::Records(vec![(7, db.record(7)), (3, db.record(3))]));
        assert_eq!(db.accesses(), 2);
    }

    #[test]
    fn bad_requests() {
        let db = small_db();
        let before = db.as_bytes().to_vec();
        assert!(matches!(handle(&db, &ServerRequest::FetchIndices(vec![8])), Err(Error::Request(_))));
        assert!(matches!(
            handle(&db, &ServerRequest::XorSelect(BitVector::zeros(9))),
            Err(Error::Request(_))
        ));
        assert_eq!(db.accesses(), 0);
        assert_eq!(db.as_bytes(), &before[..]);
    }

    proptest! {
        #[test]
        fn xor_select_is_linear(a in prop::collection::vec(any::<bool>(), 8), b in prop::collection::vec(any::<bool>(), 8)) {
            let db = small_db();
            let (va, vb) = (BitVector::from_bools(&a), BitVector::from_bools(&b));
            let block = |v: BitVector| match handle(&db, &ServerRequest::XorSelect(v)).unwrap() {
                ServerResponse::XorBlock(r) => r,
                other => panic!("unexpected {other:?}"),
            };
            let sum = block(va.xor(&vb).unwrap());
            let parts = xor_records(&block(va.clone()), &block(vb.clone())).unwrap();
            prop_assert_eq!(sum, parts);
            let ones = (va.count_ones() + vb.count_ones() + va.xor(&vb).unwrap().count_ones()) as u64;
            prop_assert_eq!(db.accesses(), ones);
        }
    }
}
