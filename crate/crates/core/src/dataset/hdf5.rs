//! Minimal read-only access to VDISC-style HDF5 files through the system
//! libhdf5 (1.10 ABI, 64-bit `hid_t`).

use std::ffi::{c_char, c_int, c_uint, c_void, CStr, CString};
use std::path::Path;
use std::sync::Mutex;

use super::{collect_records, DatasetFormat, LabeledDataset};
use crate::error::DatasetError;

/// The serial libhdf5 build is not thread-safe.
static LIBRARY: Mutex<()> = Mutex::new(());

/// Name of the function-source string dataset.
pub const SOURCE_DATASET: &str = "functionSource";

#[allow(non_camel_case_types)]
type hid_t = i64;
#[allow(non_camel_case_types)]
type herr_t = c_int;
#[allow(non_camel_case_types)]
type htri_t = c_int;

const H5P_DEFAULT: hid_t = 0;
const H5S_ALL: hid_t = 0;
const H5F_ACC_RDONLY: c_uint = 0;
const H5T_DIR_ASCEND: c_int = 1;

const H5T_INTEGER: c_int = 0;
const H5T_STRING: c_int = 3;
const H5T_ENUM: c_int = 8;

#[link(name = "hdf5_serial")]
extern "C" {
    fn H5open() -> herr_t;
    fn H5Eset_auto2(estack: hid_t, func: *const c_void, data: *mut c_void) -> herr_t;
    fn H5Fopen(name: *const c_char, flags: c_uint, fapl: hid_t) -> hid_t;
    fn H5Fclose(id: hid_t) -> herr_t;
    fn H5Lexists(loc: hid_t, name: *const c_char, lapl: hid_t) -> htri_t;
    fn H5Dopen2(loc: hid_t, name: *const c_char, dapl: hid_t) -> hid_t;
    fn H5Dclose(id: hid_t) -> herr_t;
    fn H5Dget_space(id: hid_t) -> hid_t;
    fn H5Dget_type(id: hid_t) -> hid_t;
    fn H5Dread(
        dset: hid_t,
        mem_type: hid_t,
        mem_space: hid_t,
        file_space: hid_t,
        plist: hid_t,
        buf: *mut c_void,
    ) -> herr_t;
    fn H5Dvlen_reclaim(type_id: hid_t, space: hid_t, plist: hid_t, buf: *mut c_void) -> herr_t;
    fn H5Sget_simple_extent_npoints(space: hid_t) -> i64;
    fn H5Sclose(id: hid_t) -> herr_t;
    fn H5Tget_class(id: hid_t) -> c_int;
    fn H5Tget_size(id: hid_t) -> usize;
    fn H5Tis_variable_str(id: hid_t) -> htri_t;
    fn H5Tcopy(id: hid_t) -> hid_t;
    fn H5Tget_native_type(id: hid_t, direction: c_int) -> hid_t;
    fn H5Tclose(id: hid_t) -> herr_t;
}

/// An HDF5 handle closed on drop.
struct Handle(hid_t, unsafe extern "C" fn(hid_t) -> herr_t);

impl Drop for Handle {
    fn drop(&mut self) {
        // SAFETY: the id was returned valid by the library and is closed once.
        unsafe {
            (self.1)(self.0);
        }
    }
}

fn check(id: hid_t, what: &str, path: &Path) -> Result<hid_t, DatasetError> {
    if id < 0 {
        Err(DatasetError::Parse {
            path: path.to_path_buf(),
            msg: format!("HDF5 error: {what}"),
        })
    } else {
        Ok(id)
    }
}

struct Dataset {
    dset: Handle,
    space: Handle,
    dtype: Handle,
    len: usize,
}

fn open_dataset(file: hid_t, name: &str, path: &Path) -> Result<Dataset, DatasetError> {
    let cname = CString::new(name).map_err(|_| DatasetError::MissingColumn {
        path: path.to_path_buf(),
        column: name.to_string(),
    })?;
    // SAFETY: `file` is an open file id and `cname` a valid C string.
    unsafe {
        if H5Lexists(file, cname.as_ptr(), H5P_DEFAULT) <= 0 {
            return Err(DatasetError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            });
        }
        let dset = Handle(check(H5Dopen2(file, cname.as_ptr(), H5P_DEFAULT), name, path)?, H5Dclose);
        let space = Handle(check(H5Dget_space(dset.0), name, path)?, H5Sclose);
        let dtype = Handle(check(H5Dget_type(dset.0), name, path)?, H5Tclose);
        let n = H5Sget_simple_extent_npoints(space.0);
        let len = usize::try_from(n).map_err(|_| DatasetError::Parse {
            path: path.to_path_buf(),
            msg: format!("{name}: bad extent {n}"),
        })?;
        Ok(Dataset { dset, space, dtype, len })
    }
}

fn read_strings(ds: &Dataset, path: &Path) -> Result<Vec<String>, DatasetError> {
    let fail = |msg: &str| DatasetError::Parse {
        path: path.to_path_buf(),
        msg: format!("{SOURCE_DATASET}: {msg}"),
    };
    // SAFETY: buffers are sized from the dataset extent and element size, and
    // variable-length strings are reclaimed with the same memory type.
    unsafe {
        if H5Tget_class(ds.dtype.0) != H5T_STRING {
            return Err(fail("not a string dataset"));
        }
        if H5Tis_variable_str(ds.dtype.0) > 0 {
            // same character set as the file, so no conversion is attempted
            let mem = Handle(check(H5Tcopy(ds.dtype.0), "string type", path)?, H5Tclose);
            let mut ptrs: Vec<*mut c_char> = vec![std::ptr::null_mut(); ds.len];
            if H5Dread(ds.dset.0, mem.0, H5S_ALL, H5S_ALL, H5P_DEFAULT, ptrs.as_mut_ptr().cast()) < 0 {
                return Err(fail("read failed"));
            }
            let out = ptrs
                .iter()
                .map(|&p| {
                    if p.is_null() {
                        String::new()
                    } else {
                        CStr::from_ptr(p).to_string_lossy().into_owned()
                    }
                })
                .collect();
            H5Dvlen_reclaim(mem.0, ds.space.0, H5P_DEFAULT, ptrs.as_mut_ptr().cast());
            Ok(out)
        } else {
            let size = H5Tget_size(ds.dtype.0);
            let mem = Handle(check(H5Tcopy(ds.dtype.0), "string type", path)?, H5Tclose);
            let mut buf = vec![0u8; size * ds.len];
            if H5Dread(ds.dset.0, mem.0, H5S_ALL, H5S_ALL, H5P_DEFAULT, buf.as_mut_ptr().cast()) < 0 {
                return Err(fail("read failed"));
            }
            Ok(buf
                .chunks(size.max(1))
                .take(ds.len)
                .map(|c| {
                    let end = c.iter().position(|&b| b == 0).unwrap_or(c.len());
                    String::from_utf8_lossy(&c[..end]).into_owned()
                })
                .collect())
        }
    }
}

/// Reads a boolean (h5py enum) or integer dataset; nonzero is true.
fn read_flags(ds: &Dataset, name: &str, path: &Path) -> Result<Vec<bool>, DatasetError> {
    let fail = |msg: &str| DatasetError::Parse {
        path: path.to_path_buf(),
        msg: format!("{name}: {msg}"),
    };
    // SAFETY: the buffer holds `len` elements of the native memory type.
    unsafe {
        let class = H5Tget_class(ds.dtype.0);
        if class != H5T_ENUM && class != H5T_INTEGER {
            return Err(fail("not a boolean dataset"));
        }
        let mem = Handle(
            check(H5Tget_native_type(ds.dtype.0, H5T_DIR_ASCEND), "native type", path)?,
            H5Tclose,
        );
        let size = H5Tget_size(mem.0);
        let mut buf = vec![0u8; size * ds.len];
        if H5Dread(ds.dset.0, mem.0, H5S_ALL, H5S_ALL, H5P_DEFAULT, buf.as_mut_ptr().cast()) < 0 {
            return Err(fail("read failed"));
        }
        Ok(buf.chunks(size.max(1)).take(ds.len).map(|c| c.iter().any(|&b| b != 0)).collect())
    }
}

/// Loads `functionSource` and the boolean dataset `cwe` (e.g. `CWE-476`).
/// Sample ids are `<file stem>:<row>`.
pub fn read_vdisc(path: &Path, cwe: &str) -> Result<LabeledDataset, DatasetError> {
    let cpath = CString::new(path.to_string_lossy().as_bytes()).map_err(|_| DatasetError::Parse {
        path: path.to_path_buf(),
        msg: "path contains NUL".into(),
    })?;
    let _guard = LIBRARY.lock().unwrap_or_else(|e| e.into_inner());
    // SAFETY: library initialisation and file open with valid arguments;
    // automatic error printing is turned off for this process.
    let file = unsafe {
        H5open();
        H5Eset_auto2(0, std::ptr::null(), std::ptr::null_mut());
        let id = H5Fopen(cpath.as_ptr(), H5F_ACC_RDONLY, H5P_DEFAULT);
        if id < 0 {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                msg: "not a readable HDF5 file".into(),
            });
        }
        Handle(id, H5Fclose)
    };
    let sources = open_dataset(file.0, SOURCE_DATASET, path)?;
    let flags = open_dataset(file.0, cwe, path)?;
    if sources.len != flags.len {
        return Err(DatasetError::Parse {
            path: path.to_path_buf(),
            msg: format!(
                "{SOURCE_DATASET} has {} rows but {cwe} has {}",
                sources.len, flags.len
            ),
        });
    }
    let text = read_strings(&sources, path)?;
    let labels = read_flags(&flags, cwe, path)?;
    let stem = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let records = text
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (source, label))| (format!("{stem}:{i}"), source, label));
    collect_records(records, path, cwe, DatasetFormat::Hdf5Vdisc)
}
