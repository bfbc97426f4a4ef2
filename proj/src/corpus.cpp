#include "rsvc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "rsvc/threading.hpp"
#include "rsvc/wav.hpp"

namespace rsvc {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kPadSeconds = 0.05;        // silence framing each utterance
constexpr double kMaxHarmonicHz = 7000.0;   // keep harmonics clear of Nyquist

double midi_to_hz(int midi) { return 440.0 * std::pow(2.0, (midi - 69) / 12.0); }

/// Two-pole resonator with ~unit gain at the center frequency.
struct Resonator {
  double b0 = 0, a1 = 0, a2 = 0;
  double y1 = 0, y2 = 0;

  void tune(double fc_hz, double bw_hz, double sample_rate) {
    const double r = std::exp(-kPi * bw_hz / sample_rate);
    const double theta = 2.0 * kPi * fc_hz / sample_rate;
    a1 = 2.0 * r * std::cos(theta);
    a2 = -r * r;
    b0 = (1.0 - r * r) * std::sin(theta);
  }
  double tick(double x) {
    const double y = b0 * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

/// Phoneme timbre map: each token deterministically rescales the singer's
/// formants, shared across singers so content stays singer-independent.
std::array<double, 3> token_formant_scales(int token) {
  std::mt19937 rng(0x7000u + unsigned(token));
  std::uniform_real_distribution<double> s1{0.80, 1.25}, s2{0.85, 1.20}, s3{0.90, 1.15};
  return {s1(rng), s2(rng), s3(rng)};
}

std::mt19937 derived_rng(unsigned seed, unsigned stream) {
  std::seed_seq sq{seed, stream};
  return std::mt19937(sq);
}

std::string zero_pad(int value, int width) {
  std::ostringstream os;
  os.width(width);
  os.fill('0');
  os << value;
  return os.str();
}

}  // namespace

void SingerSpec::validate() const {
  if (singer_id.empty()) throw std::invalid_argument("singer: empty singer_id");
  if (f0_base_hz < 80.0 || f0_base_hz > 600.0)
    throw std::invalid_argument("singer " + singer_id + ": f0_base_hz out of 80-600 Hz");
  for (int j = 0; j < 3; ++j) {
    if (formant_freqs[std::size_t(j)] >= 8000.0)
      throw std::invalid_argument("singer " + singer_id + ": formant >= 8000 Hz");
    if (j > 0 && formant_freqs[std::size_t(j)] <= formant_freqs[std::size_t(j - 1)])
      throw std::invalid_argument("singer " + singer_id + ": formants not increasing");
  }
  if (breathiness < 0.0 || breathiness > 1.0)
    throw std::invalid_argument("singer " + singer_id + ": breathiness outside [0,1]");
}

void SongScore::validate() const {
  if (notes.empty()) throw std::invalid_argument("score: no notes");
  if (tempo_scale <= 0.0) throw std::invalid_argument("score: tempo_scale must be positive");
  for (const Note& n : notes) {
    if (n.duration_s <= 0.0) throw std::invalid_argument("score: non-positive note duration");
    if (n.phoneme_token < 0 || n.phoneme_token >= vocab_size)
      throw std::invalid_argument("score: phoneme token " + std::to_string(n.phoneme_token) +
                                  " outside vocabulary of " + std::to_string(vocab_size));
  }
}

int num_unvoiced_tokens(int vocab_size) {
  if (vocab_size >= 8) return 3;
  if (vocab_size >= 4) return 1;
  return 0;
}

bool token_is_voiced(int token, int vocab_size) {
  return token < vocab_size - num_unvoiced_tokens(vocab_size);
}

RenderedUtterance render_utterance(const SingerSpec& singer, const SongScore& score,
                                   unsigned seed) {
  singer.validate();
  score.validate();
  std::mt19937 rng(seed);
  std::normal_distribution<double> gauss{0.0, 1.0};
  std::uniform_real_distribution<double> amp_dist{0.6, 1.0};

  const double sr = double(kSampleRate);
  const std::size_t pad = std::size_t(kPadSeconds * sr);

  struct Segment {
    std::size_t begin, end;
    double f0;  // 0 for unvoiced
    int token;
    double amp;
    int harmonics;
  };
  std::vector<Segment> segments;
  std::size_t cursor = pad;
  for (const Note& n : score.notes) {
    const double dur = n.duration_s / score.tempo_scale;
    const std::size_t len = std::max<std::size_t>(std::size_t(dur * sr), 1);
    Segment seg;
    seg.begin = cursor;
    seg.end = cursor + len;
    seg.token = n.phoneme_token;
    seg.amp = amp_dist(rng);
    if (token_is_voiced(n.phoneme_token, score.vocab_size)) {
      seg.f0 = midi_to_hz(n.midi_pitch);
      const double peak_f0 = seg.f0 * std::pow(2.0, std::abs(singer.vibrato_depth_cents) / 1200.0);
      seg.harmonics = std::max(1, std::min(12, int(kMaxHarmonicHz / peak_f0)));
    } else {
      seg.f0 = 0.0;
      seg.harmonics = 0;
    }
    segments.push_back(seg);
    cursor = seg.end;
  }
  const std::size_t total = cursor + pad;

  std::vector<double> f0_inst(total, 0.0);
  std::vector<std::uint8_t> voiced(total, 0);
  std::vector<double> excitation(total, 0.0);
  double phase = 0.0;
  for (const Segment& seg : segments) {
    const double fade = std::min(0.010, double(seg.end - seg.begin) / sr / 4.0);
    const std::size_t fade_len = std::max<std::size_t>(std::size_t(fade * sr), 1);
    for (std::size_t i = seg.begin; i < seg.end; ++i) {
      const double t_note = double(i - seg.begin) / sr;
      double env = seg.amp;
      if (i - seg.begin < fade_len)
        env *= 0.5 - 0.5 * std::cos(kPi * double(i - seg.begin) / double(fade_len));
      else if (seg.end - i <= fade_len)
        env *= 0.5 - 0.5 * std::cos(kPi * double(seg.end - i) / double(fade_len));
      if (seg.f0 > 0.0) {
        const double cents =
            singer.vibrato_depth_cents * std::sin(2.0 * kPi * singer.vibrato_rate_hz * t_note);
        const double f0 = seg.f0 * std::pow(2.0, cents / 1200.0);
        f0_inst[i] = f0;
        voiced[i] = 1;
        phase += f0 / sr;
        double s = 0.0;
        for (int k = 1; k <= seg.harmonics; ++k)
          s += std::sin(2.0 * kPi * double(k) * phase) / double(k);
        excitation[i] = env * (s + 0.3 * singer.breathiness * gauss(rng));
      } else {
        excitation[i] = env * 0.5 * gauss(rng);
      }
    }
  }

  std::array<Resonator, 3> bank;
  const std::array<double, 3> gains = {1.0, 0.5, 0.25};
  std::vector<double> out(total, 0.0);
  for (const Segment& seg : segments) {
    const std::array<double, 3> scales = token_formant_scales(seg.token);
    for (int j = 0; j < 3; ++j) {
      const double fc =
          std::clamp(singer.formant_freqs[std::size_t(j)] * scales[std::size_t(j)], 120.0, 7600.0);
      bank[std::size_t(j)].tune(fc, 120.0 + fc / 20.0, sr);
    }
    for (std::size_t i = seg.begin; i < seg.end; ++i) {
      double y = 0.0;
      for (int j = 0; j < 3; ++j)
        y += gains[std::size_t(j)] * bank[std::size_t(j)].tick(excitation[i]);
      out[i] = y;
    }
  }

  double peak = 0.0;
  for (double v : out) peak = std::max(peak, std::abs(v));
  const double norm = peak > 1e-12 ? 0.45 / peak : 1.0;

  RenderedUtterance r;
  r.audio.sample_rate = kSampleRate;
  r.audio.samples.resize(total);
  for (std::size_t i = 0; i < total; ++i) r.audio.samples[i] = float(out[i] * norm);

  const Eigen::Index T = 1 + Eigen::Index(total) / kHop;
  r.contour.f0_hz.resize(std::size_t(T), 0.0f);
  r.contour.vuv.resize(std::size_t(T), 0);
  for (Eigen::Index t = 0; t < T; ++t) {
    const std::size_t center = std::min(std::size_t(t) * kHop, total - 1);
    if (voiced[center]) {
      r.contour.f0_hz[std::size_t(t)] = float(f0_inst[center]);
      r.contour.vuv[std::size_t(t)] = 1;
    }
  }
  r.contour.energy = frame_rms(r.audio);

  r.token_labels.reserve(score.notes.size());
  for (const Note& n : score.notes) r.token_labels.push_back(n.phoneme_token);
  return r;
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("manifest: cannot write " + path);
  for (const ManifestEntry& e : entries) {
    nlohmann::json j;
    j["utterance_id"] = e.utterance_id;
    j["wav_path"] = e.wav_path;
    j["singer_id"] = e.singer_id;
    j["token_labels"] = e.token_labels;
    j["split"] = e.split;
    j["role"] = e.role;
    f << j.dump() << "\n";
  }
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("manifest: cannot read " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw std::runtime_error("manifest: line " + std::to_string(line_no) + ": " + ex.what());
    }
    ManifestEntry e;
    e.utterance_id = j.at("utterance_id").get<std::string>();
    e.wav_path = j.at("wav_path").get<std::string>();
    e.singer_id = j.at("singer_id").get<std::string>();
    e.token_labels = j.at("token_labels").get<std::vector<int>>();
    e.split = j.at("split").get<std::string>();
    e.role = j.at("role").get<std::string>();
    entries.push_back(std::move(e));
  }
  return entries;
}

void validate_manifest(const std::vector<ManifestEntry>& entries, const std::string& base_dir) {
  std::string target_singer;
  for (const ManifestEntry& e : entries) {
    if (e.utterance_id.empty())
      throw std::runtime_error("manifest: entry with empty utterance_id");
    if (e.split != "train" && e.split != "dev" && e.split != "test")
      throw std::runtime_error("manifest " + e.utterance_id + ": bad split '" + e.split + "'");
    if (e.role != "target_corpus" && e.role != "external_corpus" && e.role != "noise")
      throw std::runtime_error("manifest " + e.utterance_id + ": bad role '" + e.role + "'");
    if (!fs::exists(fs::path(base_dir) / e.wav_path))
      throw std::runtime_error("manifest " + e.utterance_id + ": missing wav " + e.wav_path);
    if (e.role == "target_corpus") {
      if (target_singer.empty())
        target_singer = e.singer_id;
      else if (target_singer != e.singer_id)
        throw std::runtime_error("manifest: target_corpus spans multiple singers ('" +
                                 target_singer + "' vs '" + e.singer_id + "')");
    }
  }
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

namespace {

SingerSpec draw_singer(const std::string& id, std::mt19937& rng, bool is_target) {
  std::uniform_real_distribution<double> f0_t{200, 240}, f0_e{140, 330};
  std::uniform_real_distribution<double> f1{600, 900}, f2{1050, 1500}, f3{2300, 3000};
  std::uniform_real_distribution<double> vib_rate{4.5, 6.5}, vib_depth{15, 45};
  std::uniform_real_distribution<double> breath{0.05, 0.2};
  SingerSpec s;
  s.singer_id = id;
  s.f0_base_hz = is_target ? f0_t(rng) : f0_e(rng);
  s.formant_freqs = {f1(rng), f2(rng), f3(rng)};
  s.vibrato_rate_hz = vib_rate(rng);
  s.vibrato_depth_cents = vib_depth(rng);
  s.breathiness = breath(rng);
  return s;
}

SongScore draw_score(const SingerSpec& singer, int vocab_size, std::mt19937& rng) {
  std::uniform_int_distribution<int> n_notes{4, 7};
  std::uniform_int_distribution<int> offset{-5, 7};
  std::uniform_real_distribution<double> dur{0.15, 0.35};
  std::uniform_real_distribution<double> voiced_p{0.0, 1.0};
  const int n_unvoiced = num_unvoiced_tokens(vocab_size);
  std::uniform_int_distribution<int> voiced_tok{0, vocab_size - n_unvoiced - 1};
  std::uniform_int_distribution<int> unvoiced_tok{vocab_size - std::max(n_unvoiced, 1),
                                                  vocab_size - 1};
  const int midi_center = int(std::lround(69.0 + 12.0 * std::log2(singer.f0_base_hz / 440.0)));
  SongScore score;
  score.vocab_size = vocab_size;
  const int count = n_notes(rng);
  for (int i = 0; i < count; ++i) {
    Note n;
    n.midi_pitch = midi_center + offset(rng);
    n.duration_s = dur(rng);
    n.phoneme_token =
        (n_unvoiced > 0 && voiced_p(rng) < 0.25) ? unvoiced_tok(rng) : voiced_tok(rng);
    score.notes.push_back(n);
  }
  return score;
}

AudioBuffer render_noise_track(std::mt19937& rng) {
  const double sr = double(kSampleRate);
  const std::size_t total = std::size_t(4.0 * sr);
  std::uniform_int_distribution<int> root_dist{45, 57};
  std::uniform_real_distribution<double> lfo_rate{0.2, 0.6}, lfo_phase{0.0, 2.0 * kPi};
  std::normal_distribution<double> gauss{0.0, 1.0};

  std::vector<double> out(total, 0.0);
  const int root = root_dist(rng);
  for (int interval : {0, 4, 7}) {
    const double f0 = midi_to_hz(root + interval);
    const int harmonics = std::min(16, int(kMaxHarmonicHz / f0));
    const double rate = lfo_rate(rng), ph = lfo_phase(rng);
    double phase = 0.0;
    for (std::size_t i = 0; i < total; ++i) {
      phase += f0 / sr;
      double s = 0.0;
      for (int k = 1; k <= harmonics; ++k)
        s += std::sin(2.0 * kPi * double(k) * phase) / double(k);
      const double lfo = 0.5 + 0.5 * std::sin(2.0 * kPi * rate * double(i) / sr + ph);
      out[i] += 0.25 * lfo * s;
    }
  }

  std::uniform_int_distribution<int> n_bursts{6, 10};
  std::uniform_real_distribution<double> burst_at{0.0, 4.0}, burst_len{0.1, 0.3},
      burst_fc{500, 4000};
  const int bursts = n_bursts(rng);
  for (int b = 0; b < bursts; ++b) {
    const std::size_t start = std::size_t(burst_at(rng) * sr);
    const std::size_t len = std::size_t(burst_len(rng) * sr);
    Resonator res;
    const double fc = burst_fc(rng);
    res.tune(fc, 150.0 + fc / 10.0, sr);
    for (std::size_t i = 0; i < len && start + i < total; ++i) {
      const double env = 0.5 - 0.5 * std::cos(2.0 * kPi * double(i) / double(len));
      out[start + i] += 0.5 * env * res.tick(gauss(rng));
    }
  }

  double peak = 0.0;
  for (double v : out) peak = std::max(peak, std::abs(v));
  const double norm = peak > 1e-12 ? 0.4 / peak : 1.0;
  AudioBuffer a;
  a.sample_rate = kSampleRate;
  a.samples.resize(total);
  for (std::size_t i = 0; i < total; ++i) a.samples[i] = float(out[i] * norm);
  return a;
}

std::string split_for(int index_within_role) {
  const int slot = index_within_role % 10;
  if (slot == 8) return "dev";
  if (slot == 9) return "test";
  return "train";
}

}  // namespace

std::string contour_path_for(const std::string& wav_path) {
  if (wav_path.size() >= 4 && wav_path.substr(wav_path.size() - 4) == ".wav")
    return wav_path.substr(0, wav_path.size() - 4) + ".contour";
  return wav_path + ".contour";
}

void save_contour(const MelodyContour& contour, const std::string& path) {
  const std::size_t T = contour.size();
  NamedTensors<float> t;
  auto as_tensor = [&](const std::vector<float>& v) {
    Tensor<float> x = Tensor<float>::zeros({Eigen::Index(T)});
    for (std::size_t i = 0; i < T; ++i) (*x.values)[Eigen::Index(i)] = v[i];
    return x;
  };
  std::vector<float> vuv(T);
  for (std::size_t i = 0; i < T; ++i) vuv[i] = float(contour.vuv[i]);
  t.emplace_back("f0", as_tensor(contour.f0_hz));
  t.emplace_back("energy", as_tensor(contour.energy));
  t.emplace_back("vuv", as_tensor(vuv));
  save_checkpoint(t, {{"kind", "contour"}}, path);
}

MelodyContour load_contour(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  const Tensor<float>*f0 = nullptr, *energy = nullptr, *vuv = nullptr;
  for (const auto& [name, tensor] : ck.tensors) {
    if (name == "f0") f0 = &tensor;
    if (name == "energy") energy = &tensor;
    if (name == "vuv") vuv = &tensor;
  }
  if (!f0 || !energy || !vuv)
    throw std::runtime_error("contour " + path + ": missing f0/energy/vuv");
  const std::size_t T = std::size_t(f0->values->size());
  if (std::size_t(energy->values->size()) != T || std::size_t(vuv->values->size()) != T)
    throw std::runtime_error("contour " + path + ": length mismatch");
  MelodyContour c;
  c.f0_hz.resize(T);
  c.energy.resize(T);
  c.vuv.resize(T);
  for (std::size_t i = 0; i < T; ++i) {
    c.f0_hz[i] = (*f0->values)[Eigen::Index(i)];
    c.energy[i] = (*energy->values)[Eigen::Index(i)];
    c.vuv[i] = (*vuv->values)[Eigen::Index(i)] != 0.0f ? 1 : 0;
  }
  return c;
}

std::vector<ManifestEntry> generate_corpus(const CorpusConfig& config,
                                           const std::string& out_dir) {
  if (config.num_external_singers < 2)
    throw std::invalid_argument("corpus: need at least 2 external singers");
  if (config.num_utterances < 0 || config.num_noise_tracks < 0)
    throw std::invalid_argument("corpus: negative counts");
  if (config.vocab_size < 4) throw std::invalid_argument("corpus: vocab_size must be >= 4");

  fs::create_directories(fs::path(out_dir) / "wav");
  fs::create_directories(fs::path(out_dir) / "noise");

  std::mt19937 singer_rng = derived_rng(config.seed, 0xA0);
  std::vector<SingerSpec> singers;
  singers.push_back(draw_singer("target", singer_rng, true));
  for (int i = 0; i < config.num_external_singers; ++i)
    singers.push_back(draw_singer("ext_" + std::to_string(i), singer_rng, false));

  const int n = config.num_utterances;
  const int target_count = int(std::lround(config.target_fraction * n));
  std::vector<ManifestEntry> entries(static_cast<std::size_t>(n));
  parallel_for(std::size_t(n), [&](std::size_t idx) {
    const int i = int(idx);
    std::mt19937 rng = derived_rng(config.seed, 0x1000u + unsigned(i));
    const bool is_target = i < target_count;
    const SingerSpec& singer =
        is_target ? singers[0]
                  : singers[1 + std::size_t(rng() % unsigned(config.num_external_singers))];
    const SongScore score = draw_score(singer, config.vocab_size, rng);
    const RenderedUtterance r = render_utterance(singer, score, rng());

    ManifestEntry e;
    e.utterance_id = "utt_" + zero_pad(i, 5);
    e.wav_path = "wav/" + e.utterance_id + ".wav";
    e.singer_id = singer.singer_id;
    e.token_labels = r.token_labels;
    e.role = is_target ? "target_corpus" : "external_corpus";
    e.split = split_for(is_target ? i : i - target_count);
    save_wav((fs::path(out_dir) / e.wav_path).string(), r.audio);
    save_contour(r.contour, (fs::path(out_dir) / contour_path_for(e.wav_path)).string());
    entries[idx] = std::move(e);
  });

  std::vector<ManifestEntry> noise_entries(static_cast<std::size_t>(config.num_noise_tracks));
  parallel_for(std::size_t(config.num_noise_tracks), [&](std::size_t idx) {
    std::mt19937 rng = derived_rng(config.seed, 0x2000u + unsigned(idx));
    const AudioBuffer track = render_noise_track(rng);
    ManifestEntry e;
    e.utterance_id = "bgm_" + zero_pad(int(idx), 2);
    e.wav_path = "noise/" + e.utterance_id + ".wav";
    e.singer_id = "";
    e.split = "train";
    e.role = "noise";
    save_wav((fs::path(out_dir) / e.wav_path).string(), track);
    noise_entries[idx] = std::move(e);
  });

  save_manifest(entries, (fs::path(out_dir) / "corpus.jsonl").string());
  save_manifest(noise_entries, (fs::path(out_dir) / "noise.jsonl").string());
  return entries;
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

namespace {

void write_bytes(std::ofstream& f, const void* data, std::size_t n) {
  f.write(static_cast<const char*>(data), std::streamsize(n));
}

void write_u32(std::ofstream& f, std::uint32_t v) { write_bytes(f, &v, 4); }
void write_u64(std::ofstream& f, std::uint64_t v) { write_bytes(f, &v, 8); }

void write_string(std::ofstream& f, const std::string& s) {
  write_u32(f, std::uint32_t(s.size()));
  write_bytes(f, s.data(), s.size());
}

bool read_exact(std::ifstream& f, void* data, std::size_t n) {
  f.read(static_cast<char*>(data), std::streamsize(n));
  return std::size_t(f.gcount()) == n;
}

std::uint32_t read_u32_or_throw(std::ifstream& f, const std::string& what) {
  std::uint32_t v = 0;
  if (!read_exact(f, &v, 4)) throw CheckpointTruncated("checkpoint truncated " + what);
  return v;
}

std::uint64_t read_u64_or_throw(std::ifstream& f, const std::string& what) {
  std::uint64_t v = 0;
  if (!read_exact(f, &v, 8)) throw CheckpointTruncated("checkpoint truncated " + what);
  return v;
}

std::string read_string_or_throw(std::ifstream& f, const std::string& what) {
  const std::uint32_t len = read_u32_or_throw(f, what);
  std::string s(len, '\0');
  if (len > 0 && !read_exact(f, s.data(), len))
    throw CheckpointTruncated("checkpoint truncated " + what);
  return s;
}

}  // namespace

void save_checkpoint(const NamedTensors<float>& tensors,
                     const std::map<std::string, std::string>& meta, const std::string& path) {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (!tensors[i].second.all_finite())
      throw std::invalid_argument("checkpoint: non-finite values in tensor '" +
                                  tensors[i].first + "'");
    for (std::size_t j = i + 1; j < tensors.size(); ++j)
      if (tensors[i].first == tensors[j].first)
        throw std::invalid_argument("checkpoint: duplicate tensor name '" + tensors[i].first +
                                    "'");
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  write_bytes(f, "RSVC", 4);
  write_u32(f, kCheckpointVersion);
  write_u32(f, std::uint32_t(meta.size()));
  for (const auto& [k, v] : meta) {
    write_string(f, k);
    write_string(f, v);
  }
  write_u32(f, std::uint32_t(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    write_string(f, name);
    write_u32(f, std::uint32_t(tensor.shape.size()));
    for (Eigen::Index d : tensor.shape) write_u64(f, std::uint64_t(d));
    write_bytes(f, tensor.values->data(), std::size_t(tensor.values->size()) * sizeof(float));
  }
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot read " + path);
  char magic[4] = {0, 0, 0, 0};
  if (!read_exact(f, magic, 4)) throw CheckpointTruncated("checkpoint truncated in header");
  if (std::memcmp(magic, "RSVC", 4) != 0)
    throw CheckpointBadMagic("checkpoint: bad magic in " + path);
  const std::uint32_t version = read_u32_or_throw(f, "in header");
  if (version != kCheckpointVersion)
    throw CheckpointVersionMismatch("checkpoint: unsupported version " +
                                    std::to_string(version) + " (expected " +
                                    std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  const std::uint32_t n_meta = read_u32_or_throw(f, "in metadata");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = read_string_or_throw(f, "in metadata");
    std::string v = read_string_or_throw(f, "in metadata");
    ck.meta.emplace(std::move(k), std::move(v));
  }
  const std::uint32_t n_tensors = read_u32_or_throw(f, "in tensor table");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = read_string_or_throw(f, "in tensor table");
    const std::string where = "while reading tensor '" + name + "'";
    const std::uint32_t rank = read_u32_or_throw(f, where);
    std::vector<Eigen::Index> shape(rank);
    Eigen::Index count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = Eigen::Index(read_u64_or_throw(f, where));
      if (shape[d] <= 0 || count > (Eigen::Index(1) << 31) / shape[d])
        throw CheckpointError("checkpoint: implausible dimension " + where);
      count *= shape[d];
    }
    Tensor<float> t = Tensor<float>::zeros(shape);
    if (!read_exact(f, t.values->data(), std::size_t(count) * sizeof(float)))
      throw CheckpointTruncated("checkpoint truncated " + where);
    ck.tensors.emplace_back(name, std::move(t));
  }
  return ck;
}

}  // namespace rsvc
