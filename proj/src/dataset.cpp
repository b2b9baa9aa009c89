#include "sohnet/dataset.hpp"

#include <algorithm>
#include <sstream>

#include "binio.hpp"
#include "sohnet/error.hpp"
#include "sohnet/textio.hpp"

namespace sohnet {

namespace {
constexpr char kDatasetMagic[8] = {'S', 'O', 'H', 'N', 'D', 'A', 'T', 'A'};
constexpr std::uint32_t kDatasetVersion = 1;

bool contains_temperature(const std::vector<double>& list, double t) {
    return std::find(list.begin(), list.end(), t) != list.end();
}
}  // namespace

const char* to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        case Split::Test: return "test";
        case Split::All: return "all";
    }
    return "?";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "valid" || name == "validation") return Split::Valid;
    if (name == "test") return Split::Test;
    if (name == "all") return Split::All;
    fail(ErrorKind::Config, "unknown split '" + name + "' (expected train, valid, test or all)");
}

std::size_t Dataset::cycle_count() const {
    std::size_t n = 0;
    for (const auto& c : cells) n += c.cycles.size();
    return n;
}

std::size_t Dataset::sample_count() const {
    std::size_t n = 0;
    for (const auto& c : cells)
        for (const auto& cy : c.cycles) n += cy.n_samples();
    return n;
}

RawCycle per_cell_cycle(const RawCycle& unit, int n_parallel) {
    if (n_parallel < 1) fail(ErrorKind::Config, "n_parallel must be >= 1, got " + std::to_string(n_parallel));
    RawCycle out = unit;
    const double n = static_cast<double>(n_parallel);
    for (auto& s : out.samples) s.current_a /= n;
    out.discharge_capacity_ah /= n;
    return out;
}

PreparedCell prepare_cell(const CellRecord& record, double period_s) {
    PreparedCell cell;
    cell.label = record.label;
    cell.temperature_c = record.temperature_c;
    cell.n_parallel = record.n_parallel;
    cell.q3_ah = record.reference_capacity_ah / static_cast<double>(record.n_parallel);

    std::vector<int> indices;
    for (const auto& rc : record.cycles) indices.push_back(rc.cycle_index);
    const CycleSplit split = split_cycle_indices(indices);
    for (const auto& rc : record.cycles) {
        try {
            cell.cycles.push_back(prepare_cycle(per_cell_cycle(rc, record.n_parallel), cell.q3_ah, period_s));
        } catch (const Error& e) {
            throw Error(e.kind(), "cell " + record.label + " cycle " + std::to_string(rc.cycle_index) + ": " + e.what());
        }
        const int k = rc.cycle_index;
        auto in = [k](const std::vector<int>& v) { return std::binary_search(v.begin(), v.end(), k); };
        cell.cycle_split.push_back(in(split.train) ? Split::Train : in(split.valid) ? Split::Valid : Split::Test);
    }
    return cell;
}

Dataset prepare_dataset(const Manifest& manifest, double period_s) {
    Dataset data;
    data.period_s = period_s;
    for (const auto& entry : manifest.cells) {
        const CellRecord record = load_cell(entry);
        try {
            data.cells.push_back(prepare_cell(record, period_s));
        } catch (const Error& e) {
            const std::string msg = e.what();
            if (msg.rfind("cell ", 0) == 0) throw;
            throw Error(e.kind(), "cell " + entry.label + ": " + msg);
        }
    }
    return data;
}

std::vector<CycleRef> select_cycles(const Dataset& data, const CycleFilter& filter) {
    std::vector<CycleRef> refs;
    for (std::size_t c = 0; c < data.cells.size(); ++c) {
        const auto& cell = data.cells[c];
        if (filter.single_cells_only && cell.n_parallel != 1) continue;
        if (contains_temperature(filter.exclude_temperatures, cell.temperature_c)) continue;
        if (!filter.only_temperatures.empty() && !contains_temperature(filter.only_temperatures, cell.temperature_c))
            continue;
        for (std::size_t k = 0; k < cell.cycles.size(); ++k)
            if (filter.split == Split::All || cell.cycle_split[k] == filter.split) refs.push_back({c, k});
    }
    return refs;
}

std::string encode_dataset(const Dataset& data) {
    using binio::put;
    std::string out(kDatasetMagic, sizeof(kDatasetMagic));
    put<std::uint32_t>(out, kDatasetVersion);
    put<double>(out, data.period_s);
    put<std::uint64_t>(out, data.cells.size());
    for (const auto& cell : data.cells) {
        binio::put_string(out, cell.label);
        put<double>(out, cell.temperature_c);
        put<std::int32_t>(out, cell.n_parallel);
        put<double>(out, cell.q3_ah);
        put<std::uint64_t>(out, cell.cycles.size());
        for (std::size_t k = 0; k < cell.cycles.size(); ++k) {
            const auto& cy = cell.cycles[k];
            put<std::int32_t>(out, cy.cycle_index);
            put<std::uint8_t>(out, static_cast<std::uint8_t>(cell.cycle_split[k]));
            put<double>(out, cy.grid_period_s);
            put<double>(out, cy.soh_target);
            put<double>(out, cy.q_target_ah);
            for (const auto* v : {&cy.v_scaled, &cy.i_scaled, &cy.soc_targets}) {
                put<std::uint64_t>(out, v->size());
                binio::put_doubles(out, *v);
            }
        }
    }
    return out;
}

Dataset decode_dataset(const std::string& bytes) {
    binio::Reader in(bytes, ErrorKind::Version, "prepared dataset");
    if (in.get_string(sizeof(kDatasetMagic)) != std::string(kDatasetMagic, sizeof(kDatasetMagic)))
        fail(ErrorKind::Version, "not a prepared dataset (bad magic)");
    if (const auto v = in.get<std::uint32_t>(); v != kDatasetVersion)
        fail(ErrorKind::Version, "unsupported prepared dataset version " + std::to_string(v));
    Dataset data;
    data.period_s = in.get<double>();
    data.cells.resize(in.get<std::uint64_t>());
    for (auto& cell : data.cells) {
        cell.label = in.get_string();
        cell.temperature_c = in.get<double>();
        cell.n_parallel = in.get<std::int32_t>();
        cell.q3_ah = in.get<double>();
        cell.cycles.resize(in.get<std::uint64_t>());
        for (auto& cy : cell.cycles) {
            cy.cycle_index = in.get<std::int32_t>();
            const auto split = in.get<std::uint8_t>();
            if (split > static_cast<std::uint8_t>(Split::Test)) fail(ErrorKind::Version, "prepared dataset: bad split tag");
            cell.cycle_split.push_back(static_cast<Split>(split));
            cy.grid_period_s = in.get<double>();
            cy.soh_target = in.get<double>();
            cy.q_target_ah = in.get<double>();
            cy.v_scaled = in.get_double_vector();
            cy.i_scaled = in.get_double_vector();
            cy.soc_targets = in.get_double_vector();
        }
    }
    if (!in.done()) fail(ErrorKind::Version, "trailing bytes after prepared dataset");
    return data;
}

std::string dataset_summary(const Dataset& data) {
    std::ostringstream out;
    out << "cell,temperature_c,n_parallel,cycles,train_cycles,valid_cycles,test_cycles,segments\n";
    SplitCounts totals[3];
    std::size_t all_cycles = 0, all_segments = 0;
    for (const auto& cell : data.cells) {
        SplitCounts per[3];
        std::size_t segments = 0;
        for (std::size_t k = 0; k < cell.cycles.size(); ++k) {
            auto& s = per[static_cast<int>(cell.cycle_split[k])];
            ++s.cycles;
            s.segments += cell.cycles[k].n_samples();
            segments += cell.cycles[k].n_samples();
        }
        for (int i = 0; i < 3; ++i) {
            totals[i].cycles += per[i].cycles;
            totals[i].segments += per[i].segments;
        }
        all_cycles += cell.cycles.size();
        all_segments += segments;
        out << cell.label << ',' << format_double(cell.temperature_c) << ',' << cell.n_parallel << ','
            << cell.cycles.size() << ',' << per[0].cycles << ',' << per[1].cycles << ',' << per[2].cycles << ','
            << segments << '\n';
    }
    out << "# totals: cells=" << data.cells.size() << " cycles=" << all_cycles << " segments=" << all_segments
        << " | train " << totals[0].cycles << " cycles / " << totals[0].segments << " segments"
        << " | valid " << totals[1].cycles << " / " << totals[1].segments << " | test " << totals[2].cycles
        << " / " << totals[2].segments << '\n';
    return out.str();
}

}  // namespace sohnet
