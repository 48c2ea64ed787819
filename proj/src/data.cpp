// SPDX-License-Identifier: Apache-2.0
#include "demo/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numbers>
#include <regex>
#include <sstream>

#include "demo/errors.hpp"
#include "demo/image_io.hpp"

namespace demo {

namespace fs = std::filesystem;

std::string_view modality_folder(Modality m) {
  switch (m) {
    case Modality::R: return "RGB";
    case Modality::N: return "NI";
    case Modality::T: return "TI";
  }
  return "?";
}

void SynthSpec::validate() const {
  if (num_identities < 1) throw ConfigError("synth: num_identities must be positive");
  if (instances_per_identity < 1) throw ConfigError("synth: instances_per_identity must be positive");
  if (height < 1 || width < 1) throw ConfigError("synth: image size must be positive");
  if (cameras < 1) throw ConfigError("synth: cameras must be positive");
  for (int m = 0; m < 3; ++m) {
    if (!(signal[m] >= 0.0 && signal[m] <= 1.0)) {
      throw ConfigError("synth: signal strengths must lie in [0, 1]");
    }
    if (!(noise[m] >= 0.0)) throw ConfigError("synth: noise levels must be non-negative");
  }
}

namespace {

struct Blob {
  double cx, cy, sigma;
  std::array<double, 3> amplitude;
};

struct Pattern {
  std::array<double, 3> base;
  std::array<Blob, 2> blobs;
  double stripe_freq;
  double stripe_phase;
  std::array<double, 3> stripe_amp;
  bool vertical_stripes;

  double value(int c, double y, double x, double h, double w) const {
    double v = base[c];
    for (const auto& b : blobs) {
      const double dy = (y - b.cy * h) / (b.sigma * h);
      const double dx = (x - b.cx * w) / (b.sigma * h);
      v += b.amplitude[c] * std::exp(-0.5 * (dx * dx + dy * dy));
    }
    const double t = vertical_stripes ? x / w : y / h;
    v += stripe_amp[c] * std::sin(2.0 * std::numbers::pi * stripe_freq * t + stripe_phase);
    return v;
  }
};

Pattern make_pattern(Rng& rng, bool color) {
  Pattern p{};
  auto chan = [&](double lo, double hi) {
    std::array<double, 3> a{};
    a[0] = rng.uniform(lo, hi);
    a[1] = color ? rng.uniform(lo, hi) : a[0];
    a[2] = color ? rng.uniform(lo, hi) : a[0];
    return a;
  };
  p.base = chan(0.25, 0.75);
  for (auto& b : p.blobs) {
    b.cx = rng.uniform(0.15, 0.85);
    b.cy = rng.uniform(0.1, 0.9);
    b.sigma = rng.uniform(0.08, 0.2);
    b.amplitude = chan(-0.45, 0.45);
  }
  p.stripe_freq = static_cast<double>(rng.integer(1, 4));
  p.stripe_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  p.stripe_amp = chan(-0.2, 0.2);
  p.vertical_stripes = rng.bernoulli(0.5);
  return p;
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void generate_synthetic(const SynthSpec& spec, const fs::path& root) {
  spec.validate();
  for (Modality m : kModalities) fs::create_directories(root / modality_folder(m));
  const int h = static_cast<int>(spec.height);
  const int w = static_cast<int>(spec.width);
  for (Index id = 0; id < spec.num_identities; ++id) {
    std::array<Pattern, 3> patterns;
    for (Modality m : kModalities) {
      Rng prng(derive_seed(spec.seed, static_cast<std::uint64_t>(id * 3 + static_cast<int>(m))));
      patterns[static_cast<size_t>(m)] = make_pattern(prng, m == Modality::R);
    }
    for (Index seq = 0; seq < spec.instances_per_identity; ++seq) {
      Rng irng(derive_seed(spec.seed ^ 0x5EEDF00DULL,
                           static_cast<std::uint64_t>(id * spec.instances_per_identity + seq)));
      const double shift_x = static_cast<double>(irng.integer(-1, 1));
      const double shift_y = static_cast<double>(irng.integer(-1, 1));
      const double brightness = irng.normal(0.0, 0.03);
      const SampleName name{id, seq % spec.cameras, seq};
      for (Modality m : kModalities) {
        const size_t mi = static_cast<size_t>(m);
        const int channels = m == Modality::R ? 3 : 1;
        Raster r(w, h, channels);
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            for (int c = 0; c < channels; ++c) {
              const double pat = patterns[mi].value(c, y + shift_y, x + shift_x, h, w);
              const double v = 0.5 + spec.signal[mi] * (pat - 0.5 + brightness) +
                               spec.noise[mi] * irng.normal(0.0, 1.0);
              r.at(x, y)[c] = quantize(v);
            }
          }
        }
        write_png(root / modality_folder(m) / format_sample_name(name), r);
      }
    }
  }
}

SampleName parse_sample_name(const std::string& filename) {
  static const std::regex kPattern(R"(^(\d+)_c(\d+)_(\d+)\.[A-Za-z0-9]+$)");
  std::smatch match;
  if (!std::regex_match(filename, match, kPattern)) {
    throw IngestionError("unparsable sample file name '" + filename +
                         "' (expected <id>_c<cam>_<seq>.<ext>)");
  }
  SampleName n;
  n.id = std::stoll(match[1].str());
  n.camera = std::stoll(match[2].str());
  n.sequence = std::stoll(match[3].str());
  return n;
}

std::string format_sample_name(const SampleName& name, const std::string& ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04lld_c%lld_%04lld", static_cast<long long>(name.id),
                static_cast<long long>(name.camera), static_cast<long long>(name.sequence));
  return std::string(buf) + ext;
}

Index DatasetIndex::num_identities() const { return static_cast<Index>(identities().size()); }

Index DatasetIndex::num_cameras() const {
  std::set<std::int64_t> cams;
  for (const auto& s : samples) cams.insert(s.camera);
  return static_cast<Index>(cams.size());
}

std::vector<std::int64_t> DatasetIndex::identities() const {
  std::set<std::int64_t> ids;
  for (const auto& s : samples) ids.insert(s.id);
  return {ids.begin(), ids.end()};
}

std::string DatasetIndex::summary() const {
  std::ostringstream os;
  os << samples.size() << " triples, " << num_identities() << " identities, " << num_cameras()
     << " cameras";
  return os.str();
}

DatasetIndex load_dataset(const fs::path& root) {
  std::array<std::set<std::string>, 3> files;
  for (Modality m : kModalities) {
    const fs::path dir = root / modality_folder(m);
    if (!fs::is_directory(dir)) {
      throw IngestionError("missing modality directory " + dir.string());
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file()) {
        files[static_cast<size_t>(m)].insert(entry.path().filename().string());
      }
    }
  }
  std::set<std::string> all;
  for (const auto& f : files) all.insert(f.begin(), f.end());

  DatasetIndex index;
  index.root = root;
  for (const auto& name : all) {
    for (Modality m : kModalities) {
      if (!files[static_cast<size_t>(m)].count(name)) {
        throw IngestionError("orphan sample '" + name + "': no counterpart in " +
                             (root / modality_folder(m)).string());
      }
    }
    const SampleName parsed = parse_sample_name(name);
    SampleRecord rec;
    for (Modality m : kModalities) {
      rec.paths[static_cast<size_t>(m)] = root / modality_folder(m) / name;
    }
    rec.id = parsed.id;
    rec.camera = parsed.camera;
    rec.sequence = parsed.sequence;
    index.samples.push_back(std::move(rec));
  }
  if (index.samples.empty()) throw IngestionError("dataset " + root.string() + " is empty");
  return index;
}

std::vector<std::vector<std::size_t>> pk_sample(std::span<const std::int64_t> labels, Index p,
                                                Index k, std::uint64_t seed) {
  if (p < 1 || k < 1) throw ConfigError("pk_sample: P and K must be positive");
  std::map<std::int64_t, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < labels.size(); ++i) by_id[labels[i]].push_back(i);
  if (static_cast<Index>(by_id.size()) < p) {
    throw ConfigError("pk_sample: dataset has " + std::to_string(by_id.size()) +
                      " identities but P = " + std::to_string(p));
  }
  Rng rng(seed);
  // Per identity: shuffled instances cut into chunks of K.
  std::map<std::int64_t, std::vector<std::vector<std::size_t>>> chunks;
  for (auto& [id, members] : by_id) {
    std::vector<std::size_t> pool = members;
    while (static_cast<Index>(pool.size()) < k) {
      pool.push_back(members[static_cast<size_t>(rng.integer(0, static_cast<std::int64_t>(members.size()) - 1))]);
    }
    std::shuffle(pool.begin(), pool.end(), rng.engine());
    auto& list = chunks[id];
    for (std::size_t at = 0; at + static_cast<size_t>(k) <= pool.size(); at += static_cast<size_t>(k)) {
      list.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(at),
                        pool.begin() + static_cast<std::ptrdiff_t>(at + k));
    }
  }
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::int64_t> available;
  for (const auto& [id, list] : chunks) available.push_back(id);
  std::map<std::int64_t, std::size_t> cursor;
  while (static_cast<Index>(available.size()) >= p) {
    std::shuffle(available.begin(), available.end(), rng.engine());
    std::vector<std::int64_t> chosen(available.begin(), available.begin() + p);
    std::sort(chosen.begin(), chosen.end());
    std::vector<std::size_t> batch;
    for (auto id : chosen) {
      const auto& chunk = chunks[id][cursor[id]++];
      batch.insert(batch.end(), chunk.begin(), chunk.end());
    }
    batches.push_back(std::move(batch));
    std::vector<std::int64_t> still;
    for (auto id : available) {
      if (cursor[id] < chunks[id].size()) still.push_back(id);
    }
    std::sort(still.begin(), still.end());
    available = std::move(still);
  }
  return batches;
}

ImageDataset::ImageDataset(DatasetIndex index, Index height, Index width)
    : index_(std::move(index)), height_(height), width_(width) {
  cache_.reserve(index_.samples.size());
  for (const auto& rec : index_.samples) {
    ImageStack st(3, 3, height_, width_);
    for (int m = 0; m < 3; ++m) {
      const Raster r = read_png(rec.paths[m]);
      if (r.height != height_ || r.width != width_) {
        throw IngestionError("image " + rec.paths[m].string() + " is " + std::to_string(r.width) +
                             "x" + std::to_string(r.height) + ", expected " +
                             std::to_string(width_) + "x" + std::to_string(height_));
      }
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < r.height; ++y) {
          for (int x = 0; x < r.width; ++x) {
            st.at(m, c, y, x) = (r.at(x, y)[c] / 255.0 - 0.5) / 0.5;
          }
        }
      }
    }
    cache_.push_back(std::move(st));
  }
}

std::vector<std::int64_t> ImageDataset::identity_labels() const {
  std::vector<std::int64_t> out;
  for (const auto& s : index_.samples) out.push_back(s.id);
  return out;
}

std::vector<std::int64_t> ImageDataset::camera_labels() const {
  std::vector<std::int64_t> out;
  for (const auto& s : index_.samples) out.push_back(s.camera);
  return out;
}

ModalBatch ImageDataset::batch(std::span<const std::size_t> positions) const {
  ModalBatch b;
  const Index n = static_cast<Index>(positions.size());
  const Index per_image = 3 * height_ * width_;
  for (int m = 0; m < 3; ++m) b.images[m] = ImageStack(n, 3, height_, width_);
  for (Index i = 0; i < n; ++i) {
    const std::size_t pos = positions[static_cast<size_t>(i)];
    if (pos >= cache_.size()) throw InputError("batch: sample position out of range");
    const ImageStack& src = cache_[pos];
    for (int m = 0; m < 3; ++m) {
      std::copy_n(src.data.begin() + m * per_image, per_image,
                  b.images[m].data.begin() + i * per_image);
    }
    b.labels.push_back(index_.samples[pos].id);
    b.cameras.push_back(index_.samples[pos].camera);
    b.presence.push_back({true, true, true});
  }
  return b;
}

ModalBatch ImageDataset::all() const {
  std::vector<std::size_t> pos(cache_.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  return batch(pos);
}

void flip_horizontal(ImageStack& stack, Index n) {
  for (Index c = 0; c < stack.channels; ++c) {
    for (Index y = 0; y < stack.height; ++y) {
      for (Index x = 0; x < stack.width / 2; ++x) {
        std::swap(stack.at(n, c, y, x), stack.at(n, c, y, stack.width - 1 - x));
      }
    }
  }
}

namespace {

void shift_with_padding(ImageStack& stack, Index n, Index dy, Index dx) {
  // Equivalent to zero-padding then cropping at offset (pad + dy, pad + dx).
  std::vector<double> copy(static_cast<size_t>(stack.image_size()));
  std::copy_n(stack.data.begin() + n * stack.image_size(), stack.image_size(), copy.begin());
  for (Index c = 0; c < stack.channels; ++c) {
    for (Index y = 0; y < stack.height; ++y) {
      for (Index x = 0; x < stack.width; ++x) {
        const Index sy = y + dy;
        const Index sx = x + dx;
        double v = 0.0;
        if (sy >= 0 && sy < stack.height && sx >= 0 && sx < stack.width) {
          v = copy[static_cast<size_t>((c * stack.height + sy) * stack.width + sx)];
        }
        stack.at(n, c, y, x) = v;
      }
    }
  }
}

}  // namespace

void augment(ModalBatch& batch, std::uint64_t seed, const AugmentConfig& config) {
  if (!config.enabled) return;
  const Index h = batch.images[0].height;
  const Index w = batch.images[0].width;
  const Index pad = config.pad >= 0 ? config.pad
                                    : std::max<Index>(1, static_cast<Index>(std::lround(0.04 * h)));
  for (Index i = 0; i < batch.size(); ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const bool flip = rng.bernoulli(config.flip_prob);
    const Index dy = rng.integer(-pad, pad);
    const Index dx = rng.integer(-pad, pad);
    bool erase = rng.bernoulli(config.erase_prob);
    Index ey = 0, ex = 0, eh = 0, ew = 0;
    if (erase) {
      erase = false;
      for (int attempt = 0; attempt < 10 && !erase; ++attempt) {
        const double area = rng.uniform(config.erase_area_min, config.erase_area_max) * h * w;
        const double log_lo = std::log(config.erase_aspect_min);
        const double aspect = std::exp(rng.uniform(log_lo, -log_lo));
        eh = static_cast<Index>(std::lround(std::sqrt(area * aspect)));
        ew = static_cast<Index>(std::lround(std::sqrt(area / aspect)));
        if (eh >= 1 && ew >= 1 && eh < h && ew < w) {
          ey = rng.integer(0, h - eh);
          ex = rng.integer(0, w - ew);
          erase = true;
        }
      }
    }
    for (auto& stack : batch.images) {
      shift_with_padding(stack, i, dy, dx);
      if (flip) flip_horizontal(stack, i);
      if (erase) {
        for (Index c = 0; c < stack.channels; ++c) {
          for (Index y = ey; y < ey + eh; ++y) {
            for (Index x = ex; x < ex + ew; ++x) stack.at(i, c, y, x) = 0.0;
          }
        }
      }
    }
  }
}

ModalBatch mask_modalities(const ModalBatch& batch, const std::set<Modality>& missing) {
  if (missing.size() >= 3) throw InputError("mask_modalities: at least one modality must remain");
  ModalBatch out = batch;
  for (Modality m : missing) {
    auto& stack = out.images[static_cast<size_t>(m)];
    std::fill(stack.data.begin(), stack.data.end(), 0.0);
    for (auto& p : out.presence) p[static_cast<size_t>(m)] = false;
  }
  return out;
}

}  // namespace demo
