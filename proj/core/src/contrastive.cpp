#include "cape/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace cape::ssl {

PairPlan sample_epoch_pairs(const data::PatientIndex& index, Rng& rng) {
  require(!index.patients.empty(), "pairs: empty patient index");
  PairPlan plan;
  plan.items.reserve(index.patients.size());
  for (const auto& patient : index.patients) {
    const size_t k = patient.record_ids.size();
    require(k >= 2, "pairs: index must be built with multi_ecg_only");
    const size_t a = static_cast<size_t>(rng.uniform_int(k));
    size_t b = static_cast<size_t>(rng.uniform_int(k - 1));
    if (b >= a) ++b;
    plan.items.push_back({patient.patient_id, patient.record_ids[a], patient.record_ids[b],
                          patient.cohort_id});
  }
  rng.shuffle(plan.items);
  return plan;
}

std::string to_string(BatchMode mode) { return mode == BatchMode::random ? "random" : "idb"; }

BatchMode parse_batch_mode(const std::string& s) {
  if (s == "random") return BatchMode::random;
  if (s == "idb") return BatchMode::idb;
  fail("mode: expected 'random' or 'idb', got '" + s + "'");
}

std::vector<BatchPlan> make_batches(const PairPlan& plan, BatchMode mode, size_t batch_pairs,
                                    Rng& rng) {
  require(!plan.items.empty(), "batches: empty pair plan");
  require(batch_pairs >= 1, "batches: batch_pairs must be positive");

  // Both modes start from one global shuffle, so on a single-cohort
  // dataset the two modes produce identical batch sequences.
  std::vector<PairPlan::Item> shuffled = plan.items;
  rng.shuffle(shuffled);

  std::vector<BatchPlan> batches;
  if (mode == BatchMode::random) {
    const size_t n_batches = shuffled.size() / batch_pairs;
    for (size_t b = 0; b < n_batches; ++b) {
      BatchPlan bp;
      bp.pairs.assign(shuffled.begin() + static_cast<ptrdiff_t>(b * batch_pairs),
                      shuffled.begin() + static_cast<ptrdiff_t>((b + 1) * batch_pairs));
      bp.homogeneous = std::all_of(bp.pairs.begin(), bp.pairs.end(), [&](const PairPlan::Item& it) {
        return it.cohort_id == bp.pairs.front().cohort_id;
      });
      if (bp.homogeneous) bp.cohort_id = bp.pairs.front().cohort_id;
      batches.push_back(std::move(bp));
    }
    return batches;
  }

  // IDB: group by cohort preserving the shuffled order, chunk per cohort,
  // then interleave by drawing a cohort with probability proportional to
  // its remaining pairs.
  std::map<uint16_t, std::vector<PairPlan::Item>> by_cohort;
  for (const auto& item : shuffled) by_cohort[item.cohort_id].push_back(item);

  struct Queue {
    uint16_t cohort_id;
    std::vector<BatchPlan> pending;
    size_t next = 0;
    size_t pairs_per_batch = 0;
    size_t remaining_pairs() const { return (pending.size() - next) * pairs_per_batch; }
  };
  std::vector<Queue> queues;
  for (auto& [cid, items] : by_cohort) {
    require(items.size() >= batch_pairs,
            "batches: cohort " + std::to_string(cid) + " has " + std::to_string(items.size()) +
                " pairs, fewer than batch_pairs " + std::to_string(batch_pairs));
    Queue q;
    q.cohort_id = cid;
    q.pairs_per_batch = batch_pairs;
    const size_t n_batches = items.size() / batch_pairs;
    for (size_t b = 0; b < n_batches; ++b) {
      BatchPlan bp;
      bp.pairs.assign(items.begin() + static_cast<ptrdiff_t>(b * batch_pairs),
                      items.begin() + static_cast<ptrdiff_t>((b + 1) * batch_pairs));
      bp.cohort_id = cid;
      bp.homogeneous = true;
      q.pending.push_back(std::move(bp));
    }
    queues.push_back(std::move(q));
  }

  for (;;) {
    size_t total_remaining = 0;
    size_t live = 0;
    for (const auto& q : queues) {
      total_remaining += q.remaining_pairs();
      if (q.next < q.pending.size()) ++live;
    }
    if (total_remaining == 0) break;
    size_t pick = 0;
    if (live == 1) {
      while (queues[pick].next >= queues[pick].pending.size()) ++pick;
    } else {
      uint64_t x = rng.uniform_int(total_remaining);
      for (; pick < queues.size(); ++pick) {
        const uint64_t r = queues[pick].remaining_pairs();
        if (x < r) break;
        x -= r;
      }
    }
    batches.push_back(std::move(queues[pick].pending[queues[pick].next]));
    ++queues[pick].next;
  }
  return batches;
}

double cosine_sim(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  require(u.size() == v.size(), "cosine: dimension mismatch");
  const double nu = u.norm(), nv = v.norm();
  require(nu > 0 && nv > 0, "zero-vector: cosine similarity undefined");
  return u.dot(v) / (nu * nv);
}

std::vector<int> interleaved_partners(size_t n_views) {
  std::vector<int> partner(n_views);
  for (size_t i = 0; i < n_views; ++i) partner[i] = static_cast<int>(i ^ 1);
  return partner;
}

template <class S>
S info_nce(const nn::Mat<S>& z, std::span<const int> partner, const LossConfig& cfg,
           nn::Mat<S>* d_z) {
  cfg.validate();
  const Eigen::Index n = z.cols();
  require(n >= 2 && n % 2 == 0, "infonce: need an even number of views >= 2");
  require(static_cast<size_t>(n) == partner.size(), "infonce: partner list size mismatch");
  for (Eigen::Index i = 0; i < n; ++i) {
    const int p = partner[static_cast<size_t>(i)];
    require(p >= 0 && p < n && p != i && partner[static_cast<size_t>(p)] == i,
            "infonce: invalid pairing");
  }

  // Normalize columns; similarities are dot products of unit vectors.
  nn::Mat<S> zhat(z.rows(), n);
  nn::Vec<S> norms(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S nrm = z.col(i).norm();
    require(nrm > S(0), "zero-vector: projection " + std::to_string(i) + " has zero norm");
    norms(i) = nrm;
    zhat.col(i) = z.col(i) / nrm;
  }

  nn::Mat<S> sim = (zhat.transpose() * zhat) / static_cast<S>(cfg.tau);

  // Row-wise softmax over k != i with max-subtraction.
  const S neg_inf = -std::numeric_limits<S>::infinity();
  S loss_sum = 0;
  nn::Mat<S> grad_sim;
  if (d_z != nullptr) grad_sim.setZero(n, n);

  for (Eigen::Index i = 0; i < n; ++i) {
    S row_max = neg_inf;
    for (Eigen::Index k = 0; k < n; ++k)
      if (k != i) row_max = std::max(row_max, sim(i, k));
    S denom = 0;
    for (Eigen::Index k = 0; k < n; ++k)
      if (k != i) denom += std::exp(sim(i, k) - row_max);
    const Eigen::Index p = partner[static_cast<size_t>(i)];
    loss_sum += -(sim(i, p) - row_max) + std::log(denom);

    if (d_z != nullptr) {
      const S inv_denom = S(1) / denom;
      for (Eigen::Index k = 0; k < n; ++k) {
        if (k == i) continue;
        S g = std::exp(sim(i, k) - row_max) * inv_denom;
        if (k == p) g -= S(1);
        grad_sim(i, k) = g / static_cast<S>(n);
      }
    }
  }
  const S loss = loss_sum / static_cast<S>(n);

  if (d_z != nullptr) {
    // d/d zhat = (G + G^T) zhat / tau, then back through normalization.
    nn::Mat<S> sym = grad_sim + grad_sim.transpose();
    nn::Mat<S> d_zhat = (zhat * sym.transpose()) / static_cast<S>(cfg.tau);
    d_z->resize(z.rows(), n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const S dot = d_zhat.col(i).dot(zhat.col(i));
      d_z->col(i) = (d_zhat.col(i) - dot * zhat.col(i)) / norms(i);
    }
  }
  return loss;
}

template <class S>
S info_nce_interleaved(const nn::Mat<S>& z, const LossConfig& cfg, nn::Mat<S>* d_z) {
  const std::vector<int> partner = interleaved_partners(static_cast<size_t>(z.cols()));
  return info_nce<S>(z, partner, cfg, d_z);
}

IdbTotal idb_total_loss(std::span<const ProjectionBatch> batches, const LossConfig& cfg) {
  require(!batches.empty(), "idb: no batches");
  IdbTotal out;
  for (size_t b = 0; b < batches.size(); ++b) {
    const auto& batch = batches[b];
    require(!batch.cohort_ids.empty(), "idb: empty batch");
    for (uint16_t cid : batch.cohort_ids)
      require(cid == batch.cohort_ids.front(),
              "idb: batch " + std::to_string(b) + " mixes cohorts " +
                  std::to_string(batch.cohort_ids.front()) + " and " + std::to_string(cid));
    const double mean = info_nce<double>(batch.z, batch.partner, cfg, nullptr);
    const size_t views = static_cast<size_t>(batch.z.cols());
    out.total += mean * static_cast<double>(views);
    out.views += views;
  }
  out.mean_per_view = out.total / static_cast<double>(out.views);
  return out;
}

template float info_nce<float>(const nn::Mat<float>&, std::span<const int>, const LossConfig&,
                               nn::Mat<float>*);
template double info_nce<double>(const nn::Mat<double>&, std::span<const int>, const LossConfig&,
                                 nn::Mat<double>*);
template float info_nce_interleaved<float>(const nn::Mat<float>&, const LossConfig&, nn::Mat<float>*);
template double info_nce_interleaved<double>(const nn::Mat<double>&, const LossConfig&,
                                             nn::Mat<double>*);

} // namespace cape::ssl
