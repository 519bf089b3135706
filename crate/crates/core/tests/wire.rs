use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::time::Duration;

use epir::mechanisms::generate;
use epir::service::{self, read_frame, Message, ServerHandle, ERR_MALFORMED};
use epir::{client, Database, Error, GenOptions, MechanismParams, RngStream, SystemParams};
use rand::Rng;

fn cluster(d: usize, n: usize, bytes: usize, seed: u64) -> (Vec<ServerHandle>, Vec<SocketAddr>, Vec<Database>) {
    let proto = Database::random(n, bytes, &mut RngStream::new(seed, 0)).unwrap();
    let copy = || Database::from_bytes(proto.as_bytes().to_vec(), bytes).unwrap();
    let servers: Vec<ServerHandle> = (0..d)
        .map(|_| service::serve(Arc::new(copy()), TcpListener::bind("127.0.0.1:0").unwrap()).unwrap())
        .collect();
    let addrs = servers.iter().map(ServerHandle::local_addr).collect();
    (servers, addrs, (0..d).map(|_| copy()).collect())
}

#[test]
fn chor_over_three_servers() {
    let params = SystemParams::new(64, 3, 0, 1, 64).unwrap();
    let (servers, addrs, dbs) = cluster(3, 64, 8, 1);
    for q in [0, 17, 63] {
        let plan = generate(&MechanismParams::Chor, q, &params, &GenOptions::default(), &mut RngStream::new(2, q as u64)).unwrap();
        let remote = service::remote_execute(&plan, &addrs).unwrap();
        let local = client::execute_local(&plan, &dbs, &mut RngStream::new(3, 0)).unwrap();
        assert_eq!(remote, local);
        assert_eq!(remote.as_bytes(), dbs[0].peek(q));
    }
    servers.into_iter().for_each(ServerHandle::shutdown);
}

#[test]
fn every_mechanism_over_the_wire() {
    let params = SystemParams::new(64, 4, 0, 1, 64).unwrap();
    let (servers, addrs, dbs) = cluster(4, 64, 8, 4);
    let mechs = [
        MechanismParams::NaiveDummy { p: 5 },
        MechanismParams::NaiveAnon,
        MechanismParams::Direct { p: 8 },
        MechanismParams::BundledAnon { p: 8 },
        MechanismParams::SeparatedAnon { p: 8 },
        MechanismParams::Sparse { theta: 0.25 },
        MechanismParams::AnonSparse { theta: 0.25 },
        MechanismParams::Subset { t: 3 },
        MechanismParams::Chor,
    ];
    let mut rng = RngStream::new(5, 0);
    for mech in mechs {
        let q = rng.gen_range(0..64);
        let plan = generate(&mech, q, &params, &GenOptions::default(), &mut rng).unwrap();
        assert_eq!(service::remote_execute(&plan, &addrs).unwrap().as_bytes(), dbs[0].peek(q), "{mech}");
    }
    servers.into_iter().for_each(ServerHandle::shutdown);
}

#[test]
fn server_down_is_a_transport_error() {
    let params = SystemParams::new(32, 3, 0, 1, 64).unwrap();
    let (mut servers, addrs, _) = cluster(3, 32, 8, 6);
    servers.pop().unwrap().shutdown();
    std::thread::sleep(Duration::from_millis(50));
    let plan = generate(&MechanismParams::Chor, 4, &params, &GenOptions::default(), &mut RngStream::new(7, 0)).unwrap();
    match service::remote_execute(&plan, &addrs) {
        Err(Error::Transport { server, .. }) => assert_eq!(server, 2),
        other => panic!("expected a transport error, got {other:?}"),
    }
    servers.into_iter().for_each(ServerHandle::shutdown);
}

#[test]
fn fuzzed_frames_never_stop_the_server() {
    let (servers, addrs, dbs) = cluster(1, 16, 8, 8);
    let mut rng = RngStream::new(9, 0);
    let valid = Message::FetchIndices(vec![3]).encode();
    let mut stream = TcpStream::connect(addrs[0]).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    for i in 0..2000 {
        let mut bytes = match rng.gen_range(0..3) {
            0 => (0..rng.gen_range(0..40)).map(|_| rng.gen()).collect::<Vec<u8>>(),
            1 => Message::XorSelect(epir::BitVector::random(rng.gen_range(0..40), &mut rng)).encode(),
            _ => Message::FetchIndices((0..rng.gen_range(0..6)).map(|_| rng.gen_range(0..40)).collect()).encode(),
        };
        if !bytes.is_empty() && rng.gen_bool(0.7) {
            let k = rng.gen_range(0..bytes.len());
            bytes[k] ^= rng.gen::<u8>() | 1;
        }
        // Whatever happened to the stream, a fresh connection must still work.
        let _ = stream.write_all(&bytes);
        let _ = stream.shutdown(std::net::Shutdown::Write);
        let mut sink = Vec::new();
        let _ = stream.read_to_end(&mut sink);
        stream = TcpStream::connect(addrs[0]).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        if i % 100 == 0 {
            stream.write_all(&valid).unwrap();
            let reply = Message::from_frame(&read_frame(&mut stream).unwrap().unwrap()).unwrap();
            assert_eq!(reply, Message::Records(vec![(3, dbs[0].peek(3).to_vec())]));
        }
    }
    let mut bad_magic = valid.clone();
    bad_magic[0] = b'X';
    stream.write_all(&bad_magic).unwrap();
    let reply = Message::from_frame(&read_frame(&mut stream).unwrap().unwrap()).unwrap();
    assert!(matches!(reply, Message::Error { code: ERR_MALFORMED, .. }));
    servers.into_iter().for_each(ServerHandle::shutdown);
}
