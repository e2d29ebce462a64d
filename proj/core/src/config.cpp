#include "rivalpll/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "rivalpll/labelgen.hpp"
#include "rivalpll/numeric.hpp"

namespace rivalpll {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ValidationError("config: bad integer for " + key + ": \"" + v + "\"");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ValidationError("config: bad number for " + key + ": \"" + v + "\"");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ValidationError("config: bad seed for " + key + ": \"" + v + "\"");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config: bad boolean for " + key + ": \"" + v + "\"");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int(key, trim(item)));
  if (out.empty()) throw ValidationError("config: empty list for " + key);
  return out;
}

std::string int_list_to_string(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (key == "clean_csv") clean_csv = value;
  else if (key == "pll_csv") pll_csv = value;
  else if (key == "mixture_classes") mixture_classes = to_int(key, value);
  else if (key == "mixture_dim") mixture_dim = to_int(key, value);
  else if (key == "mixture_separation") mixture_separation = to_double(key, value);
  else if (key == "train_size") train_size = to_int(key, value);
  else if (key == "test_size") test_size = to_int(key, value);
  else if (key == "mode") mode = value;
  else if (key == "q") q = to_double(key, value);
  else if (key == "perturbation") perturbation = to_double(key, value);
  else if (key == "rival_support") rival_support = to_int(key, value);
  else if (key == "rival_weight") rival_weight = to_double(key, value);
  else if (key == "rival_matrix_path") rival_matrix_path = value;
  else if (key == "hidden") hidden = to_int_list(key, value);
  else if (key == "embed_dim") embed_dim = to_int(key, value);
  else if (key == "aug_noise") aug_noise = to_double(key, value);
  else if (key == "aug_mask") aug_mask = to_double(key, value);
  else if (key == "alpha") alpha = to_double(key, value);
  else if (key == "beta") beta = to_double(key, value);
  else if (key == "phi") phi = to_double(key, value);
  else if (key == "lambda") lambda = to_double(key, value);
  else if (key == "tau") tau = to_double(key, value);
  else if (key == "ema_momentum") ema_momentum = to_double(key, value);
  else if (key == "queue_capacity") queue_capacity = to_int(key, value);
  else if (key == "correct_loss") correct_loss = to_bool(key, value);
  else if (key == "batch_size") batch_size = to_int(key, value);
  else if (key == "lr") lr = to_double(key, value);
  else if (key == "sgd_momentum") sgd_momentum = to_double(key, value);
  else if (key == "weight_decay") weight_decay = to_double(key, value);
  else if (key == "epochs") epochs = to_int(key, value);
  else if (key == "warmup_epochs") warmup_epochs = to_int(key, value);
  else if (key == "seed") seed = to_u64(key, value);
  else if (key == "out_dir") out_dir = value;
  else throw ValidationError("config: unknown key \"" + key + "\"");
}

std::string ExperimentConfig::serialize() const {
  std::ostringstream out;
  out << "clean_csv = " << clean_csv << "\n";
  out << "pll_csv = " << pll_csv << "\n";
  out << "mixture_classes = " << mixture_classes << "\n";
  out << "mixture_dim = " << mixture_dim << "\n";
  out << "mixture_separation = " << format_double(mixture_separation) << "\n";
  out << "train_size = " << train_size << "\n";
  out << "test_size = " << test_size << "\n";
  out << "mode = " << mode << "\n";
  out << "q = " << format_double(q) << "\n";
  out << "perturbation = " << format_double(perturbation) << "\n";
  out << "rival_support = " << rival_support << "\n";
  out << "rival_weight = " << format_double(rival_weight) << "\n";
  out << "rival_matrix_path = " << rival_matrix_path << "\n";
  out << "hidden = " << int_list_to_string(hidden) << "\n";
  out << "embed_dim = " << embed_dim << "\n";
  out << "aug_noise = " << format_double(aug_noise) << "\n";
  out << "aug_mask = " << format_double(aug_mask) << "\n";
  out << "alpha = " << format_double(alpha) << "\n";
  out << "beta = " << format_double(beta) << "\n";
  out << "phi = " << format_double(phi) << "\n";
  out << "lambda = " << format_double(lambda) << "\n";
  out << "tau = " << format_double(tau) << "\n";
  out << "ema_momentum = " << format_double(ema_momentum) << "\n";
  out << "queue_capacity = " << queue_capacity << "\n";
  out << "correct_loss = " << (correct_loss ? "true" : "false") << "\n";
  out << "batch_size = " << batch_size << "\n";
  out << "lr = " << format_double(lr) << "\n";
  out << "sgd_momentum = " << format_double(sgd_momentum) << "\n";
  out << "weight_decay = " << format_double(weight_decay) << "\n";
  out << "epochs = " << epochs << "\n";
  out << "warmup_epochs = " << warmup_epochs << "\n";
  out << "seed = " << seed << "\n";
  out << "out_dir = " << out_dir << "\n";
  return out.str();
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ParseError("line " + std::to_string(line_no) + ": expected key = value");
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

void ExperimentConfig::save_file(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw ParseError("cannot open " + path + " for writing");
  f << serialize();
}

int ExperimentConfig::effective_warmup() const {
  return warmup_epochs >= 0 ? warmup_epochs : epochs / 10;
}

int ExperimentConfig::effective_queue_capacity(int train_instances) const {
  if (queue_capacity > 0) return queue_capacity;
  return std::max(1, std::min(8192, train_instances / 2));
}

void ExperimentConfig::validate() const {
  corruption_mode_from_string(mode);  // throws on unknown mode
  if (clean_csv.empty()) {
    if (mixture_classes < 2) throw ValidationError("config: mixture_classes must be >= 2");
    if (mixture_dim < 1) throw ValidationError("config: mixture_dim must be >= 1");
    if (train_size < 1 || test_size < 1)
      throw ValidationError("config: train_size and test_size must be positive");
  }
  if (!(q >= 0.0 && q < 1.0)) throw ValidationError("config: q must lie in [0, 1)");
  if (!(perturbation >= 0.0 && perturbation < 1.0))
    throw ValidationError("config: perturbation must lie in [0, 1)");
  if (rival_matrix_path.empty() && mode == "adversary_aware") {
    if (rival_support < 1) throw ValidationError("config: rival_support must be >= 1");
    if (!(rival_weight > 0.0)) throw ValidationError("config: rival_weight must be positive");
  }
  if (hidden.empty()) throw ValidationError("config: hidden must be nonempty");
  for (int w : hidden)
    if (w < 1) throw ValidationError("config: hidden widths must be >= 1");
  if (embed_dim < 1) throw ValidationError("config: embed_dim must be >= 1");
  if (aug_noise < 0.0) throw ValidationError("config: aug_noise must be >= 0");
  if (!(aug_mask >= 0.0 && aug_mask < 1.0))
    throw ValidationError("config: aug_mask must lie in [0, 1)");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("config: alpha must lie in (0, 1)");
  if (beta < 0.0) throw ValidationError("config: beta must be >= 0");
  if (!(phi >= 0.0 && phi <= 1.0)) throw ValidationError("config: phi must lie in [0, 1]");
  if (lambda < 0.0) throw ValidationError("config: lambda must be >= 0");
  if (!(tau > 0.0)) throw ValidationError("config: tau must be positive");
  if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0))
    throw ValidationError("config: ema_momentum must lie in [0, 1]");
  if (queue_capacity < 0) throw ValidationError("config: queue_capacity must be >= 0");
  if (batch_size < 1) throw ValidationError("config: batch_size must be >= 1");
  if (!(lr > 0.0)) throw ValidationError("config: lr must be positive");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0))
    throw ValidationError("config: sgd_momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ValidationError("config: weight_decay must be >= 0");
  if (epochs < 1) throw ValidationError("config: epochs must be >= 1");
  if (warmup_epochs > epochs)
    throw ValidationError("config: warmup_epochs cannot exceed epochs");
}

}  // namespace rivalpll
