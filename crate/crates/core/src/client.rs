//! In-process execution of a query plan against replicated databases.

use rand::Rng;

use crate::anonymity::{AnonBatch, Destination};
use crate::error::{Error, Result};
use crate::mechanisms::{reconstruct, QueryPlan, ServerRequest, Transport};
use crate::params::ServerId;
use crate::record::{Database, Record};
use crate::server::{handle, ServerResponse};

fn server(dbs: &[Database], id: ServerId) -> Result<&Database> {
    dbs.get(id)
        .ok_or_else(|| Error::Parameter(format!("plan addresses server {id}, only {} exist", dbs.len())))
}

/// Sends every request of `plan` and returns the responses in dispatch order.
/// Anonymous plans go through a single-user round of the anonymity channel.
pub fn dispatch_local<R: Rng + ?Sized>(
    plan: &QueryPlan,
    dbs: &[Database],
    rng: &mut R,
) -> Result<Vec<ServerResponse>> {
    match plan.transport {
        Transport::Direct => plan
            .dispatches
            .iter()
            .map(|(s, req)| handle(server(dbs, *s)?, req))
            .collect(),
        Transport::AnonBundle => {
            let mut batch = AnonBatch::new();
            batch.push(0, Destination::Fanout, &plan.dispatches);
            let (delivered, router) = batch.mix(rng)?.into_delivered();
            let mut replies = Vec::with_capacity(delivered.len());
            for d in delivered {
                let answers = d
                    .payload
                    .iter()
                    .map(|(s, req)| handle(server(dbs, *s)?, req))
                    .collect::<Result<Vec<_>>>()?;
                replies.push((d.slot, answers));
            }
            let mut routed = router.route_replies(replies)?;
            Ok(routed.pop().map(|(_, r)| r).unwrap_or_default())
        }
        Transport::AnonSeparate => {
            let mut batch: AnonBatch<(usize, &ServerRequest)> = AnonBatch::new();
            for (k, (s, req)) in plan.dispatches.iter().enumerate() {
                batch.push(0, Destination::Server(*s), (k, req));
            }
            let (delivered, router) = batch.mix(rng)?.into_delivered();
            let mut replies = Vec::with_capacity(delivered.len());
            for d in delivered {
                let Destination::Server(s) = d.destination else { unreachable!() };
                let (k, req) = d.payload;
                replies.push((d.slot, (k, handle(server(dbs, s)?, req)?)));
            }
            let mut out: Vec<Option<ServerResponse>> = vec![None; plan.dispatches.len()];
            for (_, (k, resp)) in router.route_replies(replies)? {
                out[k] = Some(resp);
            }
            Ok(out.into_iter().flatten().collect())
        }
    }
}

/// Runs `plan` end to end and reconstructs the target record.
pub fn execute_local<R: Rng + ?Sized>(plan: &QueryPlan, dbs: &[Database], rng: &mut R) -> Result<Record> {
    let responses = dispatch_local(plan, dbs, rng)?;
    reconstruct(plan, &responses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{generate, GenOptions, MechanismParams};
    use crate::params::SystemParams;
    use crate::rng::RngStream;

    fn replicas(n: usize, d: usize, bytes: usize, seed: u64) -> Vec<Database> {
        let proto = Database::random(n, bytes, &mut RngStream::new(seed, 99)).unwrap();
        (0..d).map(|_| Database::from_bytes(proto.as_bytes().to_vec(), bytes).unwrap()).collect()
    }

    #[test]
    fn every_mechanism_returns_the_target() {
        let params = SystemParams::new(64, 5, 0, 1, 64).unwrap();
        let dbs = replicas(64, 5, 8, 1);
        let mechs = [
            MechanismParams::NaiveDummy { p: 10 },
            MechanismParams::NaiveAnon,
            MechanismParams::Direct { p: 10 },
            MechanismParams::BundledAnon { p: 10 },
            MechanismParams::SeparatedAnon { p: 10 },
            MechanismParams::Sparse { theta: 0.1 },
            MechanismParams::AnonSparse { theta: 0.1 },
            MechanismParams::Subset { t: 2 },
            MechanismParams::Chor,
        ];
        let mut rng = RngStream::new(2, 0);
        for m in mechs {
            for q in (0..64).step_by(7) {
                let plan = generate(&m, q, &params, &GenOptions::default(), &mut rng).unwrap();
                let rec = execute_local(&plan, &dbs, &mut rng).unwrap();
                assert_eq!(rec, dbs[0].record(q), "{m} q={q}");
            }
        }
    }

    #[test]
    fn missing_server_is_an_error() {
        let params = SystemParams::new(16, 3, 0, 1, 64).unwrap();
        let dbs = replicas(16, 2, 8, 3);
        let mut rng = RngStream::new(4, 0);
        let plan = generate(&MechanismParams::Chor, 1, &params, &GenOptions::default(), &mut rng).unwrap();
        assert!(execute_local(&plan, &dbs, &mut rng).is_err());
    }
}
