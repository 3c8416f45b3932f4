#include "hfo/discovery.hpp"

#include <algorithm>
#include <limits>

#include "hfo/common.hpp"
#include "hfo/csvio.hpp"
#include "hfo/rng.hpp"

namespace hfo {

namespace {

// Indices 0..n-1 sorted by id, the canonical reduction order.
std::vector<std::size_t> id_order(const std::vector<uint64_t>& ids) {
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  return order;
}

std::vector<uint64_t> event_ids(const std::vector<HfoEvent>& events) {
  std::vector<uint64_t> ids;
  ids.reserve(events.size());
  for (const auto& e : events) ids.push_back(Rng::hash_str(e.id()));
  return ids;
}

}  // namespace

BackgroundSplit split_background(const Tensor& mu, const std::vector<double>& recon_losses,
                                 const std::vector<uint64_t>& ids, uint64_t seed) {
  const std::size_t n = mu.dim(0);
  if (recon_losses.size() != n || ids.size() != n) {
    throw ValidationError("split_background inputs must align");
  }
  BackgroundSplit out;
  out.model = kmeans(mu, ids, 2, 10, 300, 1e-6, Rng::stream(seed, "stage1").next_u64());

  double loss_sum[2] = {0.0, 0.0};
  std::size_t count[2] = {0, 0};
  for (std::size_t i : id_order(ids)) {
    const int c = out.model.assignment[i];
    loss_sum[c] += recon_losses[i];
    ++count[c];
  }
  if (count[0] == 0 || count[1] == 0) {
    // Degenerate split: call the empty cluster noise so no event is dropped.
    out.noise_cluster = count[0] == 0 ? 0 : 1;
    out.tie = true;
  } else {
    const double mean0 = loss_sum[0] / double(count[0]);
    const double mean1 = loss_sum[1] / double(count[1]);
    if (mean0 != mean1) {
      out.noise_cluster = mean0 > mean1 ? 0 : 1;
    } else {
      out.tie = true;
      if (count[0] != count[1]) {
        out.noise_cluster = count[0] < count[1] ? 0 : 1;
      } else {
        out.noise_cluster = 0;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    (out.model.assignment[i] == out.noise_cluster ? out.noise_idx : out.hfo_idx).push_back(i);
  }
  return out;
}

PathologicalSplit split_pathological(const Tensor& mu, const std::vector<char>& resected,
                                     const std::vector<double>& recon_losses,
                                     const std::vector<uint64_t>& ids, uint64_t seed) {
  const std::size_t n = mu.dim(0);
  if (resected.size() != n || recon_losses.size() != n || ids.size() != n) {
    throw ValidationError("split_pathological inputs must align");
  }
  PathologicalSplit out;
  out.model = kmeans(mu, ids, 2, 10, 300, 1e-6, Rng::stream(seed, "stage2").next_u64());

  double loss_sum[2] = {0.0, 0.0};
  std::size_t res_count[2] = {0, 0};
  std::size_t count[2] = {0, 0};
  for (std::size_t i : id_order(ids)) {
    const int c = out.model.assignment[i];
    loss_sum[c] += recon_losses[i];
    if (resected[i]) ++res_count[c];
    ++count[c];
  }
  out.resected_fraction.resize(2);
  for (int c = 0; c < 2; ++c) {
    out.resected_fraction[std::size_t(c)] =
        count[c] == 0 ? -1.0 : double(res_count[c]) / double(count[c]);
  }
  if (out.resected_fraction[0] != out.resected_fraction[1]) {
    out.pathological_cluster = out.resected_fraction[0] > out.resected_fraction[1] ? 0 : 1;
  } else {
    out.tie = true;
    const double mean0 = count[0] == 0 ? -std::numeric_limits<double>::infinity()
                                       : loss_sum[0] / double(count[0]);
    const double mean1 = count[1] == 0 ? -std::numeric_limits<double>::infinity()
                                       : loss_sum[1] / double(count[1]);
    out.pathological_cluster = mean1 > mean0 ? 1 : 0;
    out.note = "resected fractions tied at " + format_double(out.resected_fraction[0]) +
               "; fell back to mean reconstruction loss (cluster " +
               std::to_string(out.pathological_cluster) + ")";
  }
  return out;
}

DiscoveryResult discover(const DiscoveryInput& in, uint64_t seed) {
  const std::size_t n = in.events.size();
  if (in.mu.rank() != 2 || in.mu.dim(0) != n || in.recon_losses.size() != n ||
      in.annotated.size() != n || in.resected.size() != n) {
    throw ValidationError("discovery inputs must align");
  }
  if (n < 2) throw ValidationError("discovery needs at least two events");

  DiscoveryResult out;
  const std::vector<uint64_t> ids = event_ids(in.events);
  out.stage1 = split_background(in.mu, in.recon_losses, ids, seed);
  if (out.stage1.tie) {
    out.notes.push_back("stage 1: mean reconstruction losses tied; smaller cluster taken as noise");
  }

  for (std::size_t i : out.stage1.hfo_idx) {
    if (in.annotated[i]) out.stage2_rows.push_back(i);
  }
  if (out.stage2_rows.size() < 2) {
    throw ValidationError("discovery needs at least two HFO events from annotated subjects");
  }
  const std::size_t d = in.mu.dim(1);
  Tensor mu2({out.stage2_rows.size(), d});
  std::vector<char> resected2;
  std::vector<double> losses2;
  std::vector<uint64_t> ids2;
  for (std::size_t r = 0; r < out.stage2_rows.size(); ++r) {
    const std::size_t i = out.stage2_rows[r];
    std::copy(in.mu.data() + i * d, in.mu.data() + (i + 1) * d, mu2.data() + r * d);
    resected2.push_back(in.resected[i]);
    losses2.push_back(in.recon_losses[i]);
    ids2.push_back(ids[i]);
  }
  out.stage2 = split_pathological(mu2, resected2, losses2, ids2, seed);
  if (out.stage2.tie) out.notes.push_back("stage 2: " + out.stage2.note);

  std::vector<int> stage2_cluster(n, -1);
  for (std::size_t r = 0; r < out.stage2_rows.size(); ++r) {
    stage2_cluster[out.stage2_rows[r]] = out.stage2.model.assignment[r];
  }
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    WeakLabel& wl = out.labels[i];
    wl.event = in.events[i];
    if (out.stage1.model.assignment[i] == out.stage1.noise_cluster) {
      wl.stage_tag = "noise";
      wl.l = 0;
      continue;
    }
    int cluster = stage2_cluster[i];
    if (cluster < 0) cluster = out.stage2.model.nearest(in.mu.data() + i * d);
    wl.stage_tag = cluster == out.stage2.pathological_cluster ? "pathological" : "physiological";
    wl.l = wl.stage_tag == "pathological" ? 1 : 0;
  }
  return out;
}

void save_weak_labels(const std::filesystem::path& path, const std::vector<WeakLabel>& labels) {
  std::vector<const WeakLabel*> ordered;
  ordered.reserve(labels.size());
  for (const auto& wl : labels) ordered.push_back(&wl);
  std::sort(ordered.begin(), ordered.end(), [](const WeakLabel* a, const WeakLabel* b) {
    return event_order_less(a->event, b->event);
  });
  CsvTable table;
  table.header = {"subject", "channel", "start_ms", "end_ms", "stage_tag", "l"};
  for (const WeakLabel* wl : ordered) {
    table.rows.push_back({wl->event.subject, wl->event.channel, format_double(wl->event.start_ms),
                          format_double(wl->event.end_ms), wl->stage_tag,
                          std::to_string(wl->l)});
  }
  write_csv(path, table);
}

std::vector<WeakLabel> load_weak_labels(const std::filesystem::path& path) {
  CsvTable table = read_csv(path);
  const std::vector<std::string> want = {"subject", "channel", "start_ms",
                                         "end_ms",  "stage_tag", "l"};
  if (table.header != want) {
    throw ValidationError("bad weak label header in " + path.string());
  }
  std::vector<WeakLabel> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    WeakLabel wl;
    wl.event.subject = row[0];
    wl.event.channel = row[1];
    wl.event.start_ms = parse_double(row[2], "start_ms");
    wl.event.end_ms = parse_double(row[3], "end_ms");
    wl.stage_tag = row[4];
    if (wl.stage_tag != "noise" && wl.stage_tag != "physiological" &&
        wl.stage_tag != "pathological") {
      throw ValidationError("unknown stage_tag '" + wl.stage_tag + "' in " + path.string());
    }
    wl.l = int(parse_long(row[5], "l"));
    if (wl.l != (wl.stage_tag == "pathological" ? 1 : 0)) {
      throw ValidationError("label/stage_tag mismatch in " + path.string());
    }
    out.push_back(std::move(wl));
  }
  return out;
}

}  // namespace hfo
