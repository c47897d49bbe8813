//! Moves packed chunks between neighbor ranks, either as two-sided messages
//! or through the symmetric-heap put/signal protocol.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Result, SfError};
use crate::sfgraph::{Plan, StarForest};
use crate::symheap::{exchange_offsets, put_phase, receive_phase, FlowLayout, FlowResources, OffsetTables};
use crate::transport::{tags, TransportRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum Flow {
    RootToLeaf,
    LeafToRoot,
}

#[derive(Debug)]
pub(crate) enum Pending {
    TwoSided(Vec<TransportRequest>),
    OneSided {
        key: (Flow, usize),
        slot: usize,
        res: FlowResources,
        layout: Arc<FlowLayout>,
    },
}

#[derive(Debug)]
struct Slot {
    res: FlowResources,
    busy: bool,
}

/// Per-forest one-sided resources: offset tables and, for every flow and
/// unit size, a pool of buffer sets (one per operation in flight).
#[derive(Debug, Default)]
pub(crate) struct OneSidedState {
    tables: Option<OffsetTables>,
    layouts: HashMap<Flow, Arc<FlowLayout>>,
    pools: HashMap<(Flow, usize), Vec<Slot>>,
}

impl StarForest {
    fn peers(plan: &Plan, flow: Flow) -> (&[(usize, usize)], &[(usize, usize)]) {
        match flow {
            Flow::RootToLeaf => (&plan.remote_leaf_ranks, &plan.remote_root_ranks),
            Flow::LeafToRoot => (&plan.remote_root_ranks, &plan.remote_leaf_ranks),
        }
    }

    pub(crate) fn start_exchange(
        &self,
        plan: &Plan,
        flow: Flow,
        seq: u64,
        unit_bytes: usize,
        payloads: Vec<Vec<u8>>,
    ) -> Result<Pending> {
        let comm = self.comm();
        let Some(heap) = comm.heap() else {
            let (send_to, recv_from) = Self::peers(plan, flow);
            let tag = tags::data(plan.sf_id, seq);
            let mut reqs = Vec::with_capacity(recv_from.len());
            for ((dest, _), payload) in send_to.iter().zip(payloads) {
                comm.post_send(*dest, tag, payload)?;
            }
            for (src, n) in recv_from {
                reqs.push(comm.post_recv(*src, tag, Some(n * unit_bytes))?);
            }
            return Ok(Pending::TwoSided(reqs));
        };
        let key = (flow, unit_bytes);
        let (slot, res, layout) = {
            let mut st = self.onesided.lock().unwrap();
            if st.tables.is_none() {
                st.tables = Some(exchange_offsets(
                    comm,
                    &plan.remote_root_ranks,
                    &plan.remote_leaf_ranks,
                )?);
            }
            let tables = st.tables.clone().unwrap();
            let layout = st
                .layouts
                .entry(flow)
                .or_insert_with(|| {
                    Arc::new(match flow {
                        Flow::RootToLeaf => FlowLayout::root_to_leaf(
                            &tables,
                            &plan.remote_root_ranks,
                            &plan.remote_leaf_ranks,
                        ),
                        Flow::LeafToRoot => FlowLayout::leaf_to_root(
                            &tables,
                            &plan.remote_root_ranks,
                            &plan.remote_leaf_ranks,
                        ),
                    })
                })
                .clone();
            let pool = st.pools.entry(key).or_default();
            let slot = match pool.iter().position(|s| !s.busy) {
                Some(i) => i,
                None => {
                    let res = FlowResources::allocate(comm, &layout, unit_bytes)?;
                    pool.push(Slot { res, busy: false });
                    pool.len() - 1
                }
            };
            pool[slot].busy = true;
            (slot, pool[slot].res, layout)
        };
        put_phase(heap, &layout, &res, &payloads)?;
        Ok(Pending::OneSided {
            key,
            slot,
            res,
            layout,
        })
    }

    pub(crate) fn finish_exchange(&self, _plan: &Plan, pending: Pending) -> Result<Vec<Vec<u8>>> {
        let comm = self.comm();
        match pending {
            Pending::TwoSided(reqs) => comm
                .wait_all(reqs)?
                .into_iter()
                .map(|p| p.ok_or_else(|| SfError::Transport("receive completed without data".into())))
                .collect(),
            Pending::OneSided {
                key,
                slot,
                res,
                layout,
            } => {
                let heap = comm
                    .heap()
                    .ok_or_else(|| SfError::Precondition("symmetric buffers need the one-sided backend".into()))?;
                let out = receive_phase(heap, &layout, &res)?;
                if let Some(s) = self.onesided.lock().unwrap().pools.get_mut(&key) {
                    s[slot].busy = false;
                }
                Ok(out)
            }
        }
    }
}
