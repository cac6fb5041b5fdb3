#include <algorithm>

#include "pros/records.hpp"
#include "pros/trainer.hpp"

namespace pros {

namespace {

// every named array of a checkpoint, in storage order
struct Entry {
    std::string name;
    Shape shape;
    std::vector<double>* data;
};

std::vector<Entry> section_entries(Checkpoint& ck, std::vector<double>& state_vec,
                                   std::vector<double>& center_vec) {
    std::vector<Entry> entries;
    for (const ParamRef& r : param_refs(ck.student))
        entries.push_back({"student/" + r.name, r.shape, r.data});
    for (const ParamRef& r : param_refs(ck.teacher))
        entries.push_back({"teacher/" + r.name, r.shape, r.data});
    entries.push_back({"prototypes", {ck.bank.K, ck.bank.d}, &ck.bank.p});
    auto trainables = trainable_refs(ck.student, ck.bank);
    if (ck.opt.m.size() != trainables.size() || ck.opt.v.size() != trainables.size())
        throw ShapeError("checkpoint: optimizer state arity mismatch");
    for (size_t i = 0; i < trainables.size(); ++i) {
        entries.push_back({"opt/m/" + trainables[i].name, trainables[i].shape, &ck.opt.m[i]});
        entries.push_back({"opt/v/" + trainables[i].name, trainables[i].shape, &ck.opt.v[i]});
    }
    entries.push_back(
        {"center", {std::max<int>(1, static_cast<int>(center_vec.size()))}, &center_vec});
    entries.push_back({"state", {6}, &state_vec});
    return entries;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    Checkpoint& mut = const_cast<Checkpoint&>(ck);
    std::vector<double> state_vec = {static_cast<double>(ck.step),
                                     static_cast<double>(ck.epoch),
                                     static_cast<double>(ck.opt.step),
                                     ck.first_epoch_mean_loss,
                                     ck.last_epoch_mean_loss,
                                     static_cast<double>(ck.op_state.center.size())};
    std::vector<double> center_vec = ck.op_state.center;
    if (center_vec.empty()) center_vec.assign(1, 0.0);  // placeholder, length kept in state

    RecordFile file;
    file.version = ck.version;
    file.config_text = ck.config.to_text();
    for (const Entry& e : section_entries(mut, state_vec, center_vec))
        file.sections.push_back({e.name, e.shape, *e.data});
    write_record_file(path, file);
}

Checkpoint load_checkpoint(const std::string& path) {
    RecordFile file = read_record_file(path);
    if (file.version != 1)
        throw IoError("checkpoint: unsupported version " + std::to_string(file.version));
    Checkpoint ck = init_checkpoint(TrainConfig::from_text(file.config_text));

    std::vector<double> state_vec(6, 0.0);
    std::vector<double> center_vec;
    // shapes are validated against the embedded config
    auto entries = section_entries(ck, state_vec, center_vec);
    if (file.sections.size() != entries.size())
        throw IoError("checkpoint: section count mismatch: file has " +
                      std::to_string(file.sections.size()) + ", config implies " +
                      std::to_string(entries.size()));
    for (size_t i = 0; i < entries.size(); ++i) {
        const RecordSection& s = file.sections[i];
        Entry& e = entries[i];
        if (s.name != e.name)
            throw IoError("checkpoint: unexpected section '" + s.name + "', wanted '" + e.name +
                          "'");
        if (e.name == "center") {
            *e.data = s.data;
        } else {
            if (s.shape != e.shape)
                throw ShapeError("checkpoint: shape mismatch in section " + s.name +
                                 ": stored " + shape_str(s.shape) + ", expected " +
                                 shape_str(e.shape));
            *e.data = s.data;
        }
    }

    ck.step = static_cast<int64_t>(state_vec[0]);
    ck.epoch = static_cast<int>(state_vec[1]);
    ck.opt.step = static_cast<int64_t>(state_vec[2]);
    ck.first_epoch_mean_loss = state_vec[3];
    ck.last_epoch_mean_loss = state_vec[4];
    const int center_len = static_cast<int>(state_vec[5]);
    if (center_len == 0) {
        ck.op_state.center.clear();
    } else {
        if (center_len != static_cast<int>(center_vec.size()))
            throw IoError("checkpoint: center length mismatch");
        ck.op_state.center = center_vec;
    }
    return ck;
}

}  // namespace pros
