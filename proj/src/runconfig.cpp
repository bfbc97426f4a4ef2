#include "rsvc/runconfig.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace rsvc {

namespace {

std::string trim(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(v, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != v.size())
    throw std::invalid_argument("config: key '" + key + "' wants an integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != v.size())
    throw std::invalid_argument("config: key '" + key + "' wants a number, got '" + v + "'");
  return out;
}

float to_float(const std::string& key, const std::string& v) {
  return float(to_double(key, v));
}

unsigned to_unsigned(const std::string& key, const std::string& v) {
  const int i = to_int(key, v);
  if (i < 0)
    throw std::invalid_argument("config: key '" + key + "' wants a non-negative integer");
  return unsigned(i);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: key '" + key + "' wants true or false, got '" + v + "'");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
  if (out.empty())
    throw std::invalid_argument("config: key '" + key + "' wants a comma-separated list");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(float v) { return fmt(double(v)); }

std::string fmt_list(const std::vector<double>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += fmt(xs[i]);
  }
  return out;
}

}  // namespace

void RunConfig::wire() {
  if (melody_source != "extractor" && melody_source != "backbone" &&
      melody_source != "contour" && melody_source != "none")
    throw std::invalid_argument(
        "config: melody_source must be extractor, backbone, contour or none, got '" +
        melody_source + "'");
  content.model.n_mels = kNumMels;
  content.model.vocab_size = corpus.vocab_size;
  melody.model.n_mels = kNumMels;
  svc.conversion.n_mels = kNumMels;
  svc.conversion.d_content_in = content.model.d_bnf;
  if (melody_source == "contour")
    svc.conversion.d_melody_in = 3;
  else if (melody_source == "none")
    svc.conversion.d_melody_in = 0;
  else
    svc.conversion.d_melody_in = melody.model.d_model;
  svc.conversion.melody_from_backbone = melody_source == "backbone";
  svc.discriminators.n_mels = kNumMels;
  svc.discriminators.d_emb_in = svc.conversion.d_model;
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line, section;
  std::set<std::string> seen;
  int line_no = 0;

  auto set_value = [&](const std::string& key, const std::string& value) {
    const std::string full = section + "." + key;
    if (!seen.insert(full).second)
      throw std::invalid_argument("config: duplicate key '" + key + "' in section [" + section +
                                  "]");
    if (section == "corpus") {
      if (key == "num_utterances") c.corpus.num_utterances = to_int(full, value);
      else if (key == "num_external_singers") c.corpus.num_external_singers = to_int(full, value);
      else if (key == "num_noise_tracks") c.corpus.num_noise_tracks = to_int(full, value);
      else if (key == "vocab_size") c.corpus.vocab_size = to_int(full, value);
      else if (key == "target_fraction") c.corpus.target_fraction = to_double(full, value);
      else if (key == "dev_fraction") c.corpus.dev_fraction = to_double(full, value);
      else if (key == "test_fraction") c.corpus.test_fraction = to_double(full, value);
      else if (key == "seed") c.corpus.seed = to_unsigned(full, value);
      else throw std::invalid_argument("config: unknown key '" + key + "' in section [corpus]");
    } else if (section == "content") {
      if (key == "d_model") c.content.model.d_model = to_int(full, value);
      else if (key == "n_blocks") c.content.model.n_blocks = to_int(full, value);
      else if (key == "n_heads") c.content.model.n_heads = to_int(full, value);
      else if (key == "d_ff") c.content.model.d_ff = to_int(full, value);
      else if (key == "d_bnf") c.content.model.d_bnf = to_int(full, value);
      else if (key == "steps") c.content.steps = to_int(full, value);
      else if (key == "lr") c.content.lr = to_float(full, value);
      else if (key == "seed") c.content.seed = to_unsigned(full, value);
      else throw std::invalid_argument("config: unknown key '" + key + "' in section [content]");
    } else if (section == "melody") {
      if (key == "d_model") c.melody.model.d_model = to_int(full, value);
      else if (key == "backbone_blocks") c.melody.model.backbone_blocks = to_int(full, value);
      else if (key == "head_blocks") c.melody.model.head_blocks = to_int(full, value);
      else if (key == "n_heads") c.melody.model.n_heads = to_int(full, value);
      else if (key == "d_ff") c.melody.model.d_ff = to_int(full, value);
      else if (key == "total_steps") c.melody.total_steps = to_int(full, value);
      else if (key == "backbone_freeze_step") c.melody.backbone_freeze_step = to_int(full, value);
      else if (key == "snr_min_db") c.melody.snr_min_db = to_double(full, value);
      else if (key == "snr_max_db") c.melody.snr_max_db = to_double(full, value);
      else if (key == "crop_frames") c.melody.crop_frames = to_int(full, value);
      else if (key == "lr") c.melody.lr = to_float(full, value);
      else if (key == "seed") c.melody.seed = to_unsigned(full, value);
      else throw std::invalid_argument("config: unknown key '" + key + "' in section [melody]");
    } else if (section == "conversion") {
      if (key == "d_model") c.svc.conversion.d_model = to_int(full, value);
      else if (key == "n_heads") c.svc.conversion.n_heads = to_int(full, value);
      else if (key == "d_ff") c.svc.conversion.d_ff = to_int(full, value);
      else if (key == "use_cin") c.svc.conversion.use_cin = to_bool(full, value);
      else if (key == "melody_source") c.melody_source = value;
      else if (key == "total_steps") c.svc.total_steps = to_int(full, value);
      else if (key == "crop_frames") c.svc.crop_frames = to_int(full, value);
      else if (key == "batch_target") c.svc.batch_target = to_int(full, value);
      else if (key == "batch_external") c.svc.batch_external = to_int(full, value);
      else if (key == "lr_g") c.svc.lr_g = to_float(full, value);
      else if (key == "lr_d") c.svc.lr_d = to_float(full, value);
      else if (key == "seed") c.svc.seed = to_unsigned(full, value);
      else
        throw std::invalid_argument("config: unknown key '" + key + "' in section [conversion]");
    } else if (section == "adversarial") {
      if (key == "warmup_steps") c.svc.schedule.warmup_steps = to_int(full, value);
      else if (key == "weight_rf") c.svc.schedule.weight_rf = to_float(full, value);
      else if (key == "weight_sim") c.svc.schedule.weight_sim = to_float(full, value);
      else if (key == "channels") c.svc.discriminators.channels = to_int(full, value);
      else if (key == "d_hidden") c.svc.discriminators.d_hidden = to_int(full, value);
      else
        throw std::invalid_argument("config: unknown key '" + key + "' in section [adversarial]");
    } else if (section == "evaluation") {
      if (key == "snrs") c.evaluation.snrs_db = to_list(full, value);
      else if (key == "max_utterances") c.evaluation.max_utterances = to_int(full, value);
      else if (key == "comparison_max_utterances")
        c.evaluation.comparison_max_utterances = to_int(full, value);
      else if (key == "seed") c.evaluation.seed = to_unsigned(full, value);
      else
        throw std::invalid_argument("config: unknown key '" + key + "' in section [evaluation]");
    } else {
      throw std::invalid_argument("config: unknown section [" + section + "]");
    }
  };

  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("config: malformed section header on line " +
                                    std::to_string(line_no));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key = value on line " +
                                  std::to_string(line_no));
    if (section.empty())
      throw std::invalid_argument("config: key before any section on line " +
                                  std::to_string(line_no));
    set_value(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }

  c.wire();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string run_config_to_text(const RunConfig& config) {
  std::ostringstream out;
  out << "[corpus]\n";
  out << "num_utterances = " << config.corpus.num_utterances << "\n";
  out << "num_external_singers = " << config.corpus.num_external_singers << "\n";
  out << "num_noise_tracks = " << config.corpus.num_noise_tracks << "\n";
  out << "vocab_size = " << config.corpus.vocab_size << "\n";
  out << "target_fraction = " << fmt(config.corpus.target_fraction) << "\n";
  out << "dev_fraction = " << fmt(config.corpus.dev_fraction) << "\n";
  out << "test_fraction = " << fmt(config.corpus.test_fraction) << "\n";
  out << "seed = " << config.corpus.seed << "\n";
  out << "\n[content]\n";
  out << "d_model = " << config.content.model.d_model << "\n";
  out << "n_blocks = " << config.content.model.n_blocks << "\n";
  out << "n_heads = " << config.content.model.n_heads << "\n";
  out << "d_ff = " << config.content.model.d_ff << "\n";
  out << "d_bnf = " << config.content.model.d_bnf << "\n";
  out << "steps = " << config.content.steps << "\n";
  out << "lr = " << fmt(config.content.lr) << "\n";
  out << "seed = " << config.content.seed << "\n";
  out << "\n[melody]\n";
  out << "d_model = " << config.melody.model.d_model << "\n";
  out << "backbone_blocks = " << config.melody.model.backbone_blocks << "\n";
  out << "head_blocks = " << config.melody.model.head_blocks << "\n";
  out << "n_heads = " << config.melody.model.n_heads << "\n";
  out << "d_ff = " << config.melody.model.d_ff << "\n";
  out << "total_steps = " << config.melody.total_steps << "\n";
  out << "backbone_freeze_step = " << config.melody.backbone_freeze_step << "\n";
  out << "snr_min_db = " << fmt(config.melody.snr_min_db) << "\n";
  out << "snr_max_db = " << fmt(config.melody.snr_max_db) << "\n";
  out << "crop_frames = " << config.melody.crop_frames << "\n";
  out << "lr = " << fmt(config.melody.lr) << "\n";
  out << "seed = " << config.melody.seed << "\n";
  out << "\n[conversion]\n";
  out << "d_model = " << config.svc.conversion.d_model << "\n";
  out << "n_heads = " << config.svc.conversion.n_heads << "\n";
  out << "d_ff = " << config.svc.conversion.d_ff << "\n";
  out << "use_cin = " << (config.svc.conversion.use_cin ? "true" : "false") << "\n";
  out << "melody_source = " << config.melody_source << "\n";
  out << "total_steps = " << config.svc.total_steps << "\n";
  out << "crop_frames = " << config.svc.crop_frames << "\n";
  out << "batch_target = " << config.svc.batch_target << "\n";
  out << "batch_external = " << config.svc.batch_external << "\n";
  out << "lr_g = " << fmt(config.svc.lr_g) << "\n";
  out << "lr_d = " << fmt(config.svc.lr_d) << "\n";
  out << "seed = " << config.svc.seed << "\n";
  out << "\n[adversarial]\n";
  out << "warmup_steps = " << config.svc.schedule.warmup_steps << "\n";
  out << "weight_rf = " << fmt(config.svc.schedule.weight_rf) << "\n";
  out << "weight_sim = " << fmt(config.svc.schedule.weight_sim) << "\n";
  out << "channels = " << config.svc.discriminators.channels << "\n";
  out << "d_hidden = " << config.svc.discriminators.d_hidden << "\n";
  out << "\n[evaluation]\n";
  out << "snrs = " << fmt_list(config.evaluation.snrs_db) << "\n";
  out << "max_utterances = " << config.evaluation.max_utterances << "\n";
  out << "comparison_max_utterances = " << config.evaluation.comparison_max_utterances << "\n";
  out << "seed = " << config.evaluation.seed << "\n";
  return out.str();
}

std::uint64_t run_config_hash(const RunConfig& config) {
  return hash_text(run_config_to_text(config));
}

}  // namespace rsvc
