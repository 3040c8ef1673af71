#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fundus/error.hpp"
#include "fundus/model.hpp"

namespace fundus {

namespace {

constexpr char kMagic[8] = {'F', 'N', 'D', 'S', 'W', 'G', 'T', '1'};

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

std::string history_csv(const TrainingHistory& history) {
  std::ostringstream out;
  out << std::setprecision(17) << "epoch,train_loss,val_loss,val_acc,val_qwk\n";
  for (const auto& e : history.epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_acc << ',' << e.val_qwk << '\n';
  }
  return out.str();
}

std::string curves_csv(const TrainingHistory& history) {
  std::ostringstream out;
  out << std::setprecision(17) << "epoch,train_loss,val_loss,train_acc,val_acc\n";
  for (const auto& e : history.epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.train_acc << ',' << e.val_acc << '\n';
  }
  return out.str();
}

void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ckpt) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  {
    std::ofstream out(with_suffix(stem, ".weights"), std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + stem.string() + ".weights");
    const std::uint64_t count = ckpt.weights.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    out.write(reinterpret_cast<const char*>(ckpt.weights.data()),
              static_cast<std::streamsize>(count * sizeof(double)));
  }
  std::ofstream meta(with_suffix(stem, ".meta"));
  if (!meta) throw Error(ErrorCode::Io, "cannot write " + stem.string() + ".meta");
  meta << "fingerprint=" << ckpt.spec_fingerprint << '\n';
  meta << "epoch=" << ckpt.epoch << '\n';
  meta << "best_epoch=" << ckpt.history.best_epoch << '\n';
  if (ckpt.metrics_snapshot) {
    std::string json = format_report_json(*ckpt.metrics_snapshot);
    std::erase(json, '\n');
    meta << "metrics=" << json << '\n';
  }
  meta << "[history]\n" << history_csv(ckpt.history);
}

Checkpoint load_checkpoint(const std::filesystem::path& stem, const std::string& expected_fingerprint) {
  Checkpoint ckpt;
  {
    std::ifstream in(with_suffix(stem, ".weights"), std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot read " + stem.string() + ".weights");
    char magic[sizeof kMagic];
    std::uint64_t count = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&count), sizeof count);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
      throw Error(ErrorCode::CheckpointMismatch, stem.string() + ".weights is not a weight blob");
    }
    ckpt.weights.resize(count);
    in.read(reinterpret_cast<char*>(ckpt.weights.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw Error(ErrorCode::CheckpointMismatch, stem.string() + ".weights is truncated");
  }

  std::ifstream meta(with_suffix(stem, ".meta"));
  if (!meta) throw Error(ErrorCode::Io, "cannot read " + stem.string() + ".meta");
  std::string line;
  bool in_history = false;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    if (in_history) {
      if (line.rfind("epoch,", 0) == 0) continue;
      EpochRecord e;
      char sep;
      std::istringstream row(line);
      row >> e.epoch >> sep >> e.train_loss >> sep >> e.val_loss >> sep >> e.val_acc >> sep >> e.val_qwk;
      if (!row) throw Error(ErrorCode::CheckpointMismatch, "bad history row '" + line + "'");
      ckpt.history.epochs.push_back(e);
      continue;
    }
    if (line == "[history]") {
      in_history = true;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "fingerprint") ckpt.spec_fingerprint = value;
    else if (key == "epoch") ckpt.epoch = std::stoi(value);
    else if (key == "best_epoch") ckpt.history.best_epoch = std::stoi(value);
    else if (key == "metrics") ckpt.metrics_snapshot = parse_report_json(value);
  }
  if (!expected_fingerprint.empty() && ckpt.spec_fingerprint != expected_fingerprint) {
    throw Error(ErrorCode::CheckpointMismatch, stem.string() + " was produced by spec " +
                                                   ckpt.spec_fingerprint + ", expected " +
                                                   expected_fingerprint);
  }
  return ckpt;
}

}  // namespace fundus
