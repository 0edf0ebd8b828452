#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>

#include "hybridckf/csv.hpp"
#include "hybridckf/retina.hpp"

namespace hybridckf {

inline nlohmann::json drivers_to_json(const DriverConfig& d) {
  return {{"pin_mean", d.pin_mean},
          {"pin_amplitude", d.pin_amplitude},
          {"pin_frequency", d.pin_frequency},
          {"pout_mean", d.pout_mean}};
}

inline nlohmann::json retina_to_json(const RetinaParams& p) {
  return {{"r_in1", p.r_in1}, {"r_12", p.r_12},   {"r_24", p.r_24}, {"r_45", p.r_45},
          {"r_out5", p.r_out5}, {"c1", p.c1},     {"c2", p.c2},     {"c4", p.c4},
          {"c5", p.c5},         {"drivers", drivers_to_json(p.drivers)}};
}

inline DriverConfig drivers_from_json(const nlohmann::json& j) {
  DriverConfig d;
  d.pin_mean = j.at("pin_mean").get<double>();
  d.pin_amplitude = j.at("pin_amplitude").get<double>();
  d.pin_frequency = j.at("pin_frequency").get<double>();
  d.pout_mean = j.at("pout_mean").get<double>();
  return d;
}

inline RetinaParams retina_from_json(const nlohmann::json& j) {
  RetinaParams p;
  p.r_in1 = j.at("r_in1").get<double>();
  p.r_12 = j.at("r_12").get<double>();
  p.r_24 = j.at("r_24").get<double>();
  p.r_45 = j.at("r_45").get<double>();
  p.r_out5 = j.at("r_out5").get<double>();
  p.c1 = j.at("c1").get<double>();
  p.c2 = j.at("c2").get<double>();
  p.c4 = j.at("c4").get<double>();
  p.c5 = j.at("c5").get<double>();
  p.drivers = drivers_from_json(j.at("drivers"));
  return p;
}

inline std::filesystem::path dataset_meta_path(const std::filesystem::path& csv_path) {
  std::filesystem::path p = csv_path;
  p += ".meta.json";
  return p;
}

// CSV schema: t,pin,pout,p1,p2,p4,p5,pin_noisy,pout_noisy,y1,y2,y5 with
// round-trip decimal formatting, plus a JSON sidecar with dt/seed/snr/params.
inline void save_dataset(const TimeSeriesDataset& ds, const RetinaParams& params,
                         const std::filesystem::path& csv_path) {
  ds.validate();
  CsvWriter w(csv_path);
  w.write_row({"t", "pin", "pout", "p1", "p2", "p4", "p5", "pin_noisy", "pout_noisy", "y1", "y2", "y5"});
  for (int k = 0; k < ds.n_t(); ++k) {
    w.write_doubles({ds.times[k], ds.pin[k], ds.pout[k], ds.p_true(k, 0), ds.p_true(k, 1),
                     ds.p_true(k, 2), ds.p_true(k, 3), ds.pin_noisy[k], ds.pout_noisy[k],
                     ds.y_noisy(k, 0), ds.y_noisy(k, 1), ds.y_noisy(k, 2)});
  }

  nlohmann::json meta;
  meta["dt"] = ds.dt;
  meta["n_t"] = ds.n_t();
  meta["seed"] = ds.seed;
  meta["snr_db"] = ds.snr_db ? nlohmann::json(*ds.snr_db) : nlohmann::json(nullptr);
  meta["params"] = retina_to_json(params);
  std::ofstream out(dataset_meta_path(csv_path));
  if (!out) throw ConfigError("cannot write dataset metadata: " + dataset_meta_path(csv_path).string());
  out << meta.dump(2) << '\n';
}

struct LoadedDataset {
  TimeSeriesDataset ds;
  RetinaParams params;
};

inline LoadedDataset load_dataset(const std::filesystem::path& csv_path) {
  const CsvTable table = read_csv(csv_path);
  const std::filesystem::path meta_path = dataset_meta_path(csv_path);
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw MissingArtifact("missing dataset metadata: " + meta_path.string());
  nlohmann::json meta = nlohmann::json::parse(meta_in);

  LoadedDataset out;
  out.params = retina_from_json(meta.at("params"));
  TimeSeriesDataset& ds = out.ds;
  ds.dt = meta.at("dt").get<double>();
  ds.seed = meta.at("seed").get<std::uint64_t>();
  if (!meta.at("snr_db").is_null()) ds.snr_db = meta.at("snr_db").get<double>();

  const int n = static_cast<int>(table.rows.size());
  ds.times.resize(n);
  ds.pin.resize(n);
  ds.pout.resize(n);
  ds.pin_noisy.resize(n);
  ds.pout_noisy.resize(n);
  ds.p_true.resize(n, 4);
  ds.y_noisy.resize(n, 3);
  const int ct = table.column("t"), cpin = table.column("pin"), cpout = table.column("pout");
  const int cp1 = table.column("p1"), cp2 = table.column("p2"), cp4 = table.column("p4"),
            cp5 = table.column("p5");
  const int cpn = table.column("pin_noisy"), cpo = table.column("pout_noisy");
  const int cy1 = table.column("y1"), cy2 = table.column("y2"), cy5 = table.column("y5");
  for (int k = 0; k < n; ++k) {
    const auto& r = table.rows[k];
    ds.times[k] = parse_double(r[ct]);
    ds.pin[k] = parse_double(r[cpin]);
    ds.pout[k] = parse_double(r[cpout]);
    ds.p_true(k, 0) = parse_double(r[cp1]);
    ds.p_true(k, 1) = parse_double(r[cp2]);
    ds.p_true(k, 2) = parse_double(r[cp4]);
    ds.p_true(k, 3) = parse_double(r[cp5]);
    ds.pin_noisy[k] = parse_double(r[cpn]);
    ds.pout_noisy[k] = parse_double(r[cpo]);
    ds.y_noisy(k, 0) = parse_double(r[cy1]);
    ds.y_noisy(k, 1) = parse_double(r[cy2]);
    ds.y_noisy(k, 2) = parse_double(r[cy5]);
  }
  ds.validate();
  return out;
}

}  // namespace hybridckf
