//! In-process multi-party backend.
//!
//! Every compute party runs as its own thread holding real share vectors;
//! protocol data moves over ordered point-to-point channels. The engine
//! handle plays the helper: it deals Beaver triples from a dedicated
//! seeded stream and assists truncation and comparisons by reconstructing
//! inside the assist, exactly like the trusted third party of the
//! semi-honest deployment model. Helper traffic is covered by the modeled
//! per-operation charges rather than metered separately, so both fixed
//! backends report identical costs and reveal bit-identical values.
//!
//! Reconstruction parity with the carried backend holds while
//! intermediate products stay below 2^(63 - 2*frac_bits) in magnitude;
//! the carried backend's debug assertions police that bound in tests.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread::JoinHandle;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fixed::{FixedScalar, FixedVec};
use crate::rng::{self, kind};

use super::{
    charge_beaver, charge_compare, charge_reshare, charge_reveal, charge_share, check_pair,
    BackendKind, Boundary, Carrier, Committee, CostMeter, CostModel, Payload, RevealSink,
    ShareEngine, ShareSet,
};

enum Msg {
    Data { transfer: u64, body: Vec<u64> },
    Cmd(Cmd),
}

enum Cmd {
    Store { slot: u64, data: Vec<u64> },
    /// Sum `parts` incoming bodies for `transfer` into `slot`.
    GatherStore { slot: u64, transfer: u64, parts: usize },
    Copy { dst: u64, src: u64 },
    /// dst = src restricted to the public index list.
    Gather { dst: u64, src: u64, indices: Vec<u32> },
    Add { dst: u64, a: u64, b: u64 },
    Sub { dst: u64, a: u64, b: u64 },
    /// dst = src * c, wrapping; result sits at doubled scale.
    ScaleRaw { dst: u64, src: u64, c: u64 },
    /// Send a copy of `slot` to one receiver (peer party or the helper).
    SendSlot { slot: u64, transfer: u64, to: Sender<Msg> },
    /// Re-randomize with the helper-issued mask, then split into one fresh
    /// piece per target, preserving the sum.
    ReshareSend { slot: u64, mask: Vec<u64>, targets: Vec<(Sender<Msg>, u64)> },
    /// Beaver opening: d_i = x_i - u_i, e_i = y_i - v_i; broadcast to
    /// peers, stash own halves under `d_out` / `e_out`.
    BeaverOpen { x: u64, y: u64, u: u64, v: u64, d_out: u64, e_out: u64, transfer: u64, peers: Vec<Sender<Msg>> },
    /// Combine openings into a share of the raw product (doubled scale):
    /// z_i = w_i + d * v_i + e * u_i (+ d * e on the lead party).
    BeaverCombine { transfer: u64, parts: usize, d_own: u64, e_own: u64, u: u64, v: u64, w: u64, z_out: u64, lead: bool },
    Free { slot: u64 },
    Shutdown,
}

struct Party {
    inbox: Receiver<Msg>,
    rng: ChaCha8Rng,
    slots: HashMap<u64, Vec<u64>>,
    pending: HashMap<u64, Vec<Vec<u64>>>,
    deferred: VecDeque<Cmd>,
}

impl Party {
    fn run(mut self) {
        loop {
            let cmd = if let Some(c) = self.deferred.pop_front() {
                c
            } else {
                match self.inbox.recv() {
                    Ok(Msg::Cmd(c)) => c,
                    Ok(Msg::Data { transfer, body }) => {
                        self.pending.entry(transfer).or_default().push(body);
                        continue;
                    }
                    Err(_) => return,
                }
            };
            if !self.exec(cmd) {
                return;
            }
        }
    }

    /// Block until `parts` bodies arrived for `transfer`; commands received
    /// while waiting keep their order in the deferred queue.
    fn gather(&mut self, transfer: u64, parts: usize) -> Vec<Vec<u64>> {
        loop {
            if self.pending.get(&transfer).map_or(0, Vec::len) >= parts {
                return self.pending.remove(&transfer).unwrap();
            }
            match self.inbox.recv() {
                Ok(Msg::Data { transfer: t, body }) => {
                    self.pending.entry(t).or_default().push(body)
                }
                Ok(Msg::Cmd(c)) => self.deferred.push_back(c),
                Err(_) => panic!("channel closed while gathering transfer {transfer}"),
            }
        }
    }

    fn exec(&mut self, cmd: Cmd) -> bool {
        match cmd {
            Cmd::Store { slot, data } => {
                self.slots.insert(slot, data);
            }
            Cmd::GatherStore { slot, transfer, parts } => {
                let bodies = self.gather(transfer, parts);
                let len = bodies[0].len();
                let mut acc = vec![0u64; len];
                for body in bodies {
                    for (a, b) in acc.iter_mut().zip(body) {
                        *a = a.wrapping_add(b);
                    }
                }
                self.slots.insert(slot, acc);
            }
            Cmd::Copy { dst, src } => {
                let data = self.slots[&src].clone();
                self.slots.insert(dst, data);
            }
            Cmd::Gather { dst, src, indices } => {
                let data = &self.slots[&src];
                let out: Vec<u64> = indices.iter().map(|&i| data[i as usize]).collect();
                self.slots.insert(dst, out);
            }
            Cmd::Add { dst, a, b } => {
                let out: Vec<u64> = self.slots[&a]
                    .iter()
                    .zip(&self.slots[&b])
                    .map(|(&x, &y)| x.wrapping_add(y))
                    .collect();
                self.slots.insert(dst, out);
            }
            Cmd::Sub { dst, a, b } => {
                let out: Vec<u64> = self.slots[&a]
                    .iter()
                    .zip(&self.slots[&b])
                    .map(|(&x, &y)| x.wrapping_sub(y))
                    .collect();
                self.slots.insert(dst, out);
            }
            Cmd::ScaleRaw { dst, src, c } => {
                let out: Vec<u64> = self.slots[&src].iter().map(|&x| x.wrapping_mul(c)).collect();
                self.slots.insert(dst, out);
            }
            Cmd::SendSlot { slot, transfer, to } => {
                let body = self.slots[&slot].clone();
                let _ = to.send(Msg::Data { transfer, body });
            }
            Cmd::ReshareSend { slot, mask, targets } => {
                let mut piece: Vec<u64> = self.slots[&slot]
                    .iter()
                    .zip(&mask)
                    .map(|(&x, &m)| x.wrapping_add(m))
                    .collect();
                let n = targets.len();
                for (i, (to, transfer)) in targets.into_iter().enumerate() {
                    if i + 1 == n {
                        let _ = to.send(Msg::Data { transfer, body: piece });
                        break;
                    }
                    let fresh: Vec<u64> = (0..piece.len()).map(|_| self.rng.next_u64()).collect();
                    for (p, f) in piece.iter_mut().zip(&fresh) {
                        *p = p.wrapping_sub(*f);
                    }
                    let _ = to.send(Msg::Data { transfer, body: fresh });
                }
            }
            Cmd::BeaverOpen { x, y, u, v, d_out, e_out, transfer, peers } => {
                let d: Vec<u64> = self.slots[&x]
                    .iter()
                    .zip(&self.slots[&u])
                    .map(|(&a, &b)| a.wrapping_sub(b))
                    .collect();
                let e: Vec<u64> = self.slots[&y]
                    .iter()
                    .zip(&self.slots[&v])
                    .map(|(&a, &b)| a.wrapping_sub(b))
                    .collect();
                let mut body = d.clone();
                body.extend_from_slice(&e);
                for peer in peers {
                    let _ = peer.send(Msg::Data { transfer, body: body.clone() });
                }
                self.slots.insert(d_out, d);
                self.slots.insert(e_out, e);
            }
            Cmd::BeaverCombine { transfer, parts, d_own, e_own, u, v, w, z_out, lead } => {
                let mut d = self.slots.remove(&d_own).unwrap();
                let mut e = self.slots.remove(&e_own).unwrap();
                let len = d.len();
                for body in self.gather(transfer, parts) {
                    for i in 0..len {
                        d[i] = d[i].wrapping_add(body[i]);
                        e[i] = e[i].wrapping_add(body[len + i]);
                    }
                }
                let us = &self.slots[&u];
                let vs = &self.slots[&v];
                let ws = &self.slots[&w];
                let mut z = Vec::with_capacity(len);
                for i in 0..len {
                    let mut zi = ws[i]
                        .wrapping_add(d[i].wrapping_mul(vs[i]))
                        .wrapping_add(e[i].wrapping_mul(us[i]));
                    if lead {
                        zi = zi.wrapping_add(d[i].wrapping_mul(e[i]));
                    }
                    z.push(zi);
                }
                self.slots.insert(z_out, z);
            }
            Cmd::Free { slot } => {
                self.slots.remove(&slot);
            }
            Cmd::Shutdown => return false,
        }
        true
    }
}

pub struct MpEngine {
    frac_bits: u32,
    cost: CostModel,
    meter: CostMeter,
    committees: BTreeMap<String, Committee>,
    senders: HashMap<String, Vec<Sender<Msg>>>,
    handles: Vec<JoinHandle<()>>,
    helper_tx: Sender<Msg>,
    helper_rx: Receiver<Msg>,
    helper_pending: HashMap<u64, Vec<Vec<u64>>>,
    dealer: ChaCha8Rng,
    next_slot: u64,
    next_transfer: u64,
    reveals: Vec<RevealSink>,
    master_seed: u64,
}

impl MpEngine {
    pub fn new(frac_bits: u32, cost: CostModel, master_seed: u64) -> Self {
        let (helper_tx, helper_rx) = channel();
        Self {
            frac_bits,
            cost,
            meter: CostMeter::default(),
            committees: BTreeMap::new(),
            senders: HashMap::new(),
            handles: Vec::new(),
            helper_tx,
            helper_rx,
            helper_pending: HashMap::new(),
            dealer: rng::substream(master_seed, kind::TRIPLE, 0, 0),
            next_slot: 0,
            next_transfer: 0,
            reveals: Vec::new(),
            master_seed,
        }
    }

    fn slot(&mut self) -> u64 {
        self.next_slot += 1;
        self.next_slot
    }

    fn transfer(&mut self) -> u64 {
        self.next_transfer += 1;
        self.next_transfer
    }

    fn parties(&self, committee: &str) -> Result<&Vec<Sender<Msg>>> {
        self.senders.get(committee).ok_or_else(|| Error::UnknownCommittee(committee.to_string()))
    }

    fn cmd(&self, committee: &str, party: usize, cmd: Cmd) -> Result<()> {
        self.parties(committee)?[party]
            .send(Msg::Cmd(cmd))
            .map_err(|_| Error::NotImplemented("party thread terminated".into()))
    }

    fn broadcast(&self, committee: &str, mut make: impl FnMut(usize) -> Cmd) -> Result<()> {
        for i in 0..self.parties(committee)?.len() {
            self.cmd(committee, i, make(i))?;
        }
        Ok(())
    }

    /// Collect `parts` bodies for a transfer at the helper side.
    fn helper_gather(&mut self, transfer: u64, parts: usize) -> Vec<Vec<u64>> {
        loop {
            if self.helper_pending.get(&transfer).map_or(0, Vec::len) >= parts {
                return self.helper_pending.remove(&transfer).unwrap();
            }
            match self.helper_rx.recv() {
                Ok(Msg::Data { transfer: t, body }) => {
                    self.helper_pending.entry(t).or_default().push(body)
                }
                _ => panic!("helper channel closed"),
            }
        }
    }

    /// Reconstruct a slot at the helper. Functionality-internal; never
    /// charged or logged by itself.
    fn reconstruct(&mut self, committee: &str, slot: u64, len: usize) -> Result<Vec<u64>> {
        let transfer = self.transfer();
        let parts = self.parties(committee)?.len();
        let helper = self.helper_tx.clone();
        self.broadcast(committee, |_| Cmd::SendSlot { slot, transfer, to: helper.clone() })?;
        let bodies = self.helper_gather(transfer, parts);
        let mut acc = vec![0u64; len];
        for body in bodies {
            for (a, b) in acc.iter_mut().zip(body) {
                *a = a.wrapping_add(b);
            }
        }
        Ok(acc)
    }

    /// Split a reconstructed vector into fresh shares and store them at the
    /// committee under a new slot.
    fn distribute(&mut self, committee: &str, value: &[u64], rng: &mut ChaCha8Rng) -> Result<u64> {
        let slot = self.slot();
        let parts = self.parties(committee)?.len();
        let mut last = value.to_vec();
        for i in 0..parts - 1 {
            let share: Vec<u64> = (0..value.len()).map(|_| rng.next_u64()).collect();
            for (l, s) in last.iter_mut().zip(&share) {
                *l = l.wrapping_sub(*s);
            }
            self.cmd(committee, i, Cmd::Store { slot, data: share })?;
        }
        self.cmd(committee, parts - 1, Cmd::Store { slot, data: last })?;
        Ok(slot)
    }

    fn slot_of(s: &ShareSet) -> u64 {
        match s.payload {
            Payload::Slot(id) => id,
            Payload::Carried(_) => unreachable!("carried payload in multi-party engine"),
        }
    }

    fn wrap(&self, committee: &str, len: usize, slot: u64) -> ShareSet {
        ShareSet {
            committee: committee.to_string(),
            len,
            frac_bits: self.frac_bits,
            payload: Payload::Slot(slot),
        }
    }

    fn expect_fixed<'a>(&self, value: &'a Carrier) -> Result<&'a FixedVec> {
        match value {
            Carrier::Fixed(v) if v.frac_bits() == self.frac_bits => Ok(v),
            Carrier::Fixed(v) => {
                Err(Error::FracBitsMismatch { left: self.frac_bits, right: v.frac_bits() })
            }
            Carrier::F64(_) => {
                Err(Error::NumericMode { expected: BackendKind::MultiPartyInProcess.label() })
            }
        }
    }

    /// Helper-assisted exact truncation of a doubled-scale slot, returning
    /// fresh shares of the arithmetic-shifted value. Part of the modeled
    /// cost of the operation that needed it.
    fn truncate_slot(&mut self, committee: &str, slot: u64, len: usize) -> Result<u64> {
        let raw = self.reconstruct(committee, slot, len)?;
        let truncated: Vec<u64> = raw.iter().map(|&x| ((x as i64) >> self.frac_bits) as u64).collect();
        let mut dealer = self.dealer.clone();
        let out = self.distribute(committee, &truncated, &mut dealer)?;
        self.dealer = dealer;
        self.broadcast(committee, |_| Cmd::Free { slot })?;
        Ok(out)
    }

    fn local_pairwise(&mut self, a: &ShareSet, b: &ShareSet, sub: bool) -> Result<ShareSet> {
        check_pair(a, b)?;
        let dst = self.slot();
        let (sa, sb) = (Self::slot_of(a), Self::slot_of(b));
        self.broadcast(&a.committee, |_| {
            if sub {
                Cmd::Sub { dst, a: sa, b: sb }
            } else {
                Cmd::Add { dst, a: sa, b: sb }
            }
        })?;
        Ok(self.wrap(&a.committee, a.len, dst))
    }
}

impl Drop for MpEngine {
    fn drop(&mut self) {
        for senders in self.senders.values() {
            for tx in senders {
                let _ = tx.send(Msg::Cmd(Cmd::Shutdown));
            }
        }
        for handle in self.handles.drain(..) {
            let _ = handle.join();
        }
    }
}

impl ShareEngine for MpEngine {
    fn kind(&self) -> BackendKind {
        BackendKind::MultiPartyInProcess
    }

    fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    fn meter(&self) -> &CostMeter {
        &self.meter
    }

    fn meter_mut(&mut self) -> &mut CostMeter {
        &mut self.meter
    }

    fn reveal_log(&self) -> &[RevealSink] {
        &self.reveals
    }

    fn register(&mut self, committee: Committee) -> Result<()> {
        if self.committees.contains_key(&committee.id) {
            return Ok(());
        }
        let mut txs = Vec::with_capacity(committee.compute);
        for i in 0..committee.compute {
            let (tx, rx) = channel();
            let label = committee.party_label(i);
            let party = Party {
                inbox: rx,
                rng: rng::substream(self.master_seed, "party", rng::fnv1a(label.as_bytes()), 0),
                slots: HashMap::new(),
                pending: HashMap::new(),
                deferred: VecDeque::new(),
            };
            self.handles.push(std::thread::spawn(move || party.run()));
            txs.push(tx);
        }
        self.senders.insert(committee.id.clone(), txs);
        self.committees.insert(committee.id.clone(), committee);
        Ok(())
    }

    fn committee(&self, id: &str) -> Result<&Committee> {
        self.committees.get(id).ok_or_else(|| Error::UnknownCommittee(id.to_string()))
    }

    fn share(
        &mut self,
        value: &Carrier,
        from: &str,
        committee: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<ShareSet> {
        let v = self.expect_fixed(value)?.clone();
        let c = self.committee(committee)?.clone();
        let slot = self.distribute(committee, v.raw(), rng)?;
        charge_share(&mut self.meter, &self.cost, from, &c, v.len());
        Ok(self.wrap(committee, v.len(), slot))
    }

    fn reveal(&mut self, s: &ShareSet, sink: RevealSink) -> Result<Carrier> {
        let c = self.committee(&s.committee)?.clone();
        let raw = self.reconstruct(&s.committee, Self::slot_of(s), s.len)?;
        charge_reveal(&mut self.meter, &self.cost, &c, s.len);
        self.reveals.push(sink);
        Ok(Carrier::Fixed(FixedVec::from_raw(raw, self.frac_bits)))
    }

    fn reshare(&mut self, s: ShareSet, dst: &str, rng: &mut ChaCha8Rng) -> Result<ShareSet> {
        let src_c = self.committee(&s.committee)?.clone();
        let dst_c = self.committee(dst)?.clone();
        let (k_src, k_dst) = (src_c.compute, dst_c.compute);
        let slot = Self::slot_of(&s);
        let new_slot = self.slot();

        // Zero-sum masks refresh the randomness even for one-to-one moves.
        let mut masks: Vec<Vec<u64>> = Vec::with_capacity(k_src);
        let mut last = vec![0u64; s.len];
        for _ in 0..k_src - 1 {
            let m: Vec<u64> = (0..s.len).map(|_| rng.next_u64()).collect();
            for (l, x) in last.iter_mut().zip(&m) {
                *l = l.wrapping_sub(*x);
            }
            masks.push(m);
        }
        masks.push(last);

        // Source party i serves targets {j : j mod k_src == i}, or j = i mod
        // k_dst when that set is empty; every target gets at least one piece.
        let mut targets_of: Vec<Vec<usize>> = vec![Vec::new(); k_src];
        for j in 0..k_dst {
            targets_of[j % k_src].push(j);
        }
        for (i, t) in targets_of.iter_mut().enumerate() {
            if t.is_empty() {
                t.push(i % k_dst);
            }
        }
        let transfer_base = self.next_transfer + 1;
        self.next_transfer += k_dst as u64;
        let mut parts = vec![0usize; k_dst];
        for t in &targets_of {
            for &j in t {
                parts[j] += 1;
            }
        }
        let dst_txs = self.parties(dst)?.clone();
        for (i, targets) in targets_of.iter().enumerate() {
            let list: Vec<(Sender<Msg>, u64)> = targets
                .iter()
                .map(|&j| (dst_txs[j].clone(), transfer_base + j as u64))
                .collect();
            self.cmd(&s.committee, i, Cmd::ReshareSend {
                slot,
                mask: masks[i].clone(),
                targets: list,
            })?;
        }
        for (j, &p) in parts.iter().enumerate() {
            self.cmd(dst, j, Cmd::GatherStore {
                slot: new_slot,
                transfer: transfer_base + j as u64,
                parts: p,
            })?;
        }
        self.broadcast(&s.committee, |_| Cmd::Free { slot })?;
        charge_reshare(&mut self.meter, &self.cost, &src_c, &dst_c, s.len);
        Ok(self.wrap(dst, s.len, new_slot))
    }

    fn duplicate(&mut self, s: &ShareSet) -> Result<ShareSet> {
        let dst = self.slot();
        let src = Self::slot_of(s);
        self.broadcast(&s.committee, |_| Cmd::Copy { dst, src })?;
        Ok(self.wrap(&s.committee, s.len, dst))
    }

    fn free(&mut self, s: ShareSet) {
        let slot = Self::slot_of(&s);
        let _ = self.broadcast(&s.committee, |_| Cmd::Free { slot });
    }

    fn add(&mut self, a: &ShareSet, b: &ShareSet) -> Result<ShareSet> {
        self.local_pairwise(a, b, false)
    }

    fn sub(&mut self, a: &ShareSet, b: &ShareSet) -> Result<ShareSet> {
        self.local_pairwise(a, b, true)
    }

    fn scalar_mul(&mut self, c: f64, a: &ShareSet) -> Result<ShareSet> {
        let enc = FixedScalar::encode(c, self.frac_bits)?;
        let tmp = self.slot();
        let src = Self::slot_of(a);
        self.broadcast(&a.committee, |_| Cmd::ScaleRaw { dst: tmp, src, c: enc.raw() })?;
        let out = self.truncate_slot(&a.committee, tmp, a.len)?;
        Ok(self.wrap(&a.committee, a.len, out))
    }

    fn weighted_sum(&mut self, coeffs: &[f64], inputs: &[&ShareSet]) -> Result<ShareSet> {
        if coeffs.len() != inputs.len() {
            return Err(Error::LengthMismatch { left: coeffs.len(), right: inputs.len() });
        }
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut acc = self.scalar_mul(coeffs[0], inputs[0])?;
        for (&c, s) in coeffs[1..].iter().zip(&inputs[1..]) {
            let term = self.scalar_mul(c, s)?;
            let sum = self.add(&acc, &term)?;
            self.free(acc);
            self.free(term);
            acc = sum;
        }
        Ok(acc)
    }

    fn gather(&mut self, s: &ShareSet, indices: &[usize]) -> Result<ShareSet> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= s.len) {
            return Err(Error::LengthMismatch { left: bad, right: s.len });
        }
        let src = Self::slot_of(s);
        let dst = self.slot();
        let small: Vec<u32> = indices.iter().map(|&i| i as u32).collect();
        self.broadcast(&s.committee, |_| Cmd::Gather {
            dst,
            src,
            indices: small.clone(),
        })?;
        Ok(self.wrap(&s.committee, indices.len(), dst))
    }

    fn constant(&mut self, value: &Carrier, committee: &str) -> Result<ShareSet> {
        let v = self.expect_fixed(value)?.clone();
        let parts = self.parties(committee)?.len();
        let slot = self.slot();
        // Party 0 holds the public value, everyone else holds zero.
        self.cmd(committee, 0, Cmd::Store { slot, data: v.raw().to_vec() })?;
        for i in 1..parts {
            self.cmd(committee, i, Cmd::Store { slot, data: vec![0u64; v.len()] })?;
        }
        Ok(self.wrap(committee, v.len(), slot))
    }

    fn mul_elementwise(
        &mut self,
        a: &ShareSet,
        b: &ShareSet,
        _rng: &mut ChaCha8Rng,
    ) -> Result<ShareSet> {
        check_pair(a, b)?;
        let c = self.committee(&a.committee)?.clone();
        let len = a.len;

        // Deal one triple per element: u, v uniform, w = u * v in the ring.
        let mut dealer = self.dealer.clone();
        let u_plain: Vec<u64> = (0..len).map(|_| dealer.next_u64()).collect();
        let v_plain: Vec<u64> = (0..len).map(|_| dealer.next_u64()).collect();
        let w_plain: Vec<u64> =
            u_plain.iter().zip(&v_plain).map(|(&x, &y)| x.wrapping_mul(y)).collect();
        let u = self.distribute(&a.committee, &u_plain, &mut dealer)?;
        let v = self.distribute(&a.committee, &v_plain, &mut dealer)?;
        let w = self.distribute(&a.committee, &w_plain, &mut dealer)?;
        self.dealer = dealer;

        let (d_out, e_out, z_out) = (self.slot(), self.slot(), self.slot());
        let transfer = self.transfer();
        let txs = self.parties(&a.committee)?.clone();
        let (sa, sb) = (Self::slot_of(a), Self::slot_of(b));
        for i in 0..txs.len() {
            let peers: Vec<Sender<Msg>> = (0..txs.len()).filter(|&j| j != i).map(|j| txs[j].clone()).collect();
            self.cmd(&a.committee, i, Cmd::BeaverOpen {
                x: sa,
                y: sb,
                u,
                v,
                d_out,
                e_out,
                transfer,
                peers,
            })?;
            self.cmd(&a.committee, i, Cmd::BeaverCombine {
                transfer,
                parts: txs.len() - 1,
                d_own: d_out,
                e_own: e_out,
                u,
                v,
                w,
                z_out,
                lead: i == 0,
            })?;
        }
        let out = self.truncate_slot(&a.committee, z_out, len)?;
        for slot in [u, v, w] {
            self.broadcast(&a.committee, |_| Cmd::Free { slot })?;
        }
        charge_beaver(&mut self.meter, &self.cost, &c, len);
        Ok(self.wrap(&a.committee, len, out))
    }

    fn compare_swap(&mut self, a: &ShareSet, b: &ShareSet) -> Result<(ShareSet, ShareSet)> {
        check_pair(a, b)?;
        let c = self.committee(&a.committee)?.clone();
        let av = self.reconstruct(&a.committee, Self::slot_of(a), a.len)?;
        let bv = self.reconstruct(&b.committee, Self::slot_of(b), b.len)?;
        let mut lo = Vec::with_capacity(a.len);
        let mut hi = Vec::with_capacity(a.len);
        for (&x, &y) in av.iter().zip(&bv) {
            if (x as i64) <= (y as i64) {
                lo.push(x);
                hi.push(y);
            } else {
                lo.push(y);
                hi.push(x);
            }
        }
        let mut dealer = self.dealer.clone();
        let lo_slot = self.distribute(&a.committee, &lo, &mut dealer)?;
        let hi_slot = self.distribute(&a.committee, &hi, &mut dealer)?;
        self.dealer = dealer;
        charge_compare(&mut self.meter, &self.cost, &c, a.len);
        Ok((self.wrap(&a.committee, a.len, lo_slot), self.wrap(&a.committee, a.len, hi_slot)))
    }

    fn compare_swap_tagged(
        &mut self,
        a_val: &ShareSet,
        a_tag: &ShareSet,
        b_val: &ShareSet,
        b_tag: &ShareSet,
    ) -> Result<(ShareSet, ShareSet, ShareSet, ShareSet)> {
        check_pair(a_val, b_val)?;
        check_pair(a_tag, b_tag)?;
        if a_val.len != a_tag.len {
            return Err(Error::LengthMismatch { left: a_val.len, right: a_tag.len });
        }
        let c = self.committee(&a_val.committee)?.clone();
        let av = self.reconstruct(&a_val.committee, Self::slot_of(a_val), a_val.len)?;
        let bv = self.reconstruct(&b_val.committee, Self::slot_of(b_val), b_val.len)?;
        let at = self.reconstruct(&a_tag.committee, Self::slot_of(a_tag), a_tag.len)?;
        let bt = self.reconstruct(&b_tag.committee, Self::slot_of(b_tag), b_tag.len)?;
        let n = av.len();
        let (mut lov, mut lot, mut hiv, mut hit) =
            (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            if (av[i] as i64) <= (bv[i] as i64) {
                lov.push(av[i]);
                lot.push(at[i]);
                hiv.push(bv[i]);
                hit.push(bt[i]);
            } else {
                lov.push(bv[i]);
                lot.push(bt[i]);
                hiv.push(av[i]);
                hit.push(at[i]);
            }
        }
        let mut dealer = self.dealer.clone();
        let s_lov = self.distribute(&a_val.committee, &lov, &mut dealer)?;
        let s_lot = self.distribute(&a_val.committee, &lot, &mut dealer)?;
        let s_hiv = self.distribute(&a_val.committee, &hiv, &mut dealer)?;
        let s_hit = self.distribute(&a_val.committee, &hit, &mut dealer)?;
        self.dealer = dealer;
        charge_compare(&mut self.meter, &self.cost, &c, a_val.len);
        Ok((
            self.wrap(&a_val.committee, n, s_lov),
            self.wrap(&a_val.committee, n, s_lot),
            self.wrap(&a_val.committee, n, s_hiv),
            self.wrap(&a_val.committee, n, s_hit),
        ))
    }

    fn functionality_input(&mut self, s: &ShareSet, _token: Boundary) -> Result<Carrier> {
        let raw = self.reconstruct(&s.committee, Self::slot_of(s), s.len)?;
        Ok(Carrier::Fixed(FixedVec::from_raw(raw, self.frac_bits)))
    }

    fn functionality_output(
        &mut self,
        value: Carrier,
        committee: &str,
        rng: &mut ChaCha8Rng,
        _token: Boundary,
    ) -> Result<ShareSet> {
        let v = self.expect_fixed(&value)?.clone();
        self.committee(committee)?;
        let slot = self.distribute(committee, v.raw(), rng)?;
        Ok(self.wrap(committee, v.len(), slot))
    }

    fn inspect_share(&mut self, s: &ShareSet, party: usize) -> Result<Vec<u64>> {
        let k = self.parties(&s.committee)?.len();
        if party >= k {
            return Err(Error::NotEnough { requested: party + 1, available: k });
        }
        let transfer = self.transfer();
        let helper = self.helper_tx.clone();
        self.cmd(&s.committee, party, Cmd::SendSlot { slot: Self::slot_of(s), transfer, to: helper })?;
        let mut bodies = self.helper_gather(transfer, 1);
        Ok(bodies.pop().unwrap())
    }
}
